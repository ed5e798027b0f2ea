//! Compiles emitted C with the system compiler and runs it on bindings.
//!
//! The compiler is `$CC` when set, `cc` otherwise. Kernels build with
//! `-O3 -march=native -fno-tree-slp-vectorize -ffp-contract=off`, so float
//! results stay identical to the interpreter.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

use crate::error::{Error, Result};
use crate::ir::visit::stored_buffers;
use crate::ir::{Layout, Program};

use super::cgen::emit_c;
use super::data::{Array, Bindings};

fn compiler() -> String {
    std::env::var("CC").ok().filter(|s| !s.is_empty()).unwrap_or_else(|| "cc".into())
}

/// Whether a C compiler can be invoked.
pub fn compiler_available() -> bool {
    Command::new(compiler()).arg("--version").output().map(|o| o.status.success()).unwrap_or(false)
}

/// A compiled kernel with its driver, kept in a private temporary
/// directory for the lifetime of the value.
pub struct NativeKernel {
    dir: tempfile::TempDir,
    exe: PathBuf,
    program: Program,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NativeRun {
    /// Every buffer the kernel stores to, after one run from the inputs.
    pub outputs: Bindings,
    /// Duration of each timed run in nanoseconds.
    pub times_ns: Vec<f64>,
}

impl NativeKernel {
    pub fn compile(p: &Program) -> Result<NativeKernel> {
        let src = emit_c(p)?;
        let dir = tempfile::tempdir()?;
        let c = dir.path().join("kernel.c");
        let exe = dir.path().join("kernel");
        fs::write(&c, src)?;
        let build = |flags: &[&str]| {
            Command::new(compiler())
                .args(flags)
                .args(["-std=c11", "-ffp-contract=off", "-o"])
                .arg(&exe)
                .arg(&c)
                .arg("-lm")
                .output()
                .map_err(|e| Error::Exec(format!("cannot run C compiler `{}`: {e}", compiler())))
        };
        // gcc's SLP vectorizer at -O3 changes f32 rounding in some nests
        let mut out = build(&["-O3", "-march=native", "-fno-tree-slp-vectorize"])?;
        for flags in [&["-O3", "-fno-tree-slp-vectorize"][..], &["-O1"]] {
            if out.status.success() {
                break;
            }
            out = build(flags)?;
        }
        if !out.status.success() {
            return Err(Error::Exec(format!(
                "C compilation failed:\n{}",
                String::from_utf8_lossy(&out.stderr)
            )));
        }
        Ok(NativeKernel { dir, exe, program: p.clone() })
    }

    /// Runs `warmup` untimed and `repeats` timed executions, each starting
    /// from `b`, and returns the result of one more run.
    pub fn run(&self, b: &Bindings, warmup: usize, repeats: usize, flush_cache: bool) -> Result<NativeRun> {
        let work = tempfile::tempdir_in(self.dir.path())?;
        for d in &self.program.buffers {
            let Some(a) = b.buffers.get(&d.name) else { continue };
            let Layout::Dense(shape) = &d.layout else {
                return Err(Error::Stage(format!("buffer `{}` is not flat", d.name)));
            };
            if a.dtype() != d.dtype || a.len() != shape.iter().product::<usize>() {
                return Err(Error::Exec(format!(
                    "buffer `{}` bound as {}[{}], declared {}{shape:?}",
                    d.name,
                    a.dtype().keyword(),
                    a.len(),
                    d.dtype.keyword()
                )));
            }
            fs::write(work.path().join(format!("{}.bin", d.name)), a.to_le_bytes())?;
        }
        let mut cmd = Command::new(&self.exe);
        cmd.arg(work.path())
            .arg(warmup.to_string())
            .arg(repeats.to_string())
            .arg(if flush_cache { "1" } else { "0" });
        for x in &self.program.params {
            cmd.arg(b.params.get(x).copied().unwrap_or(0).to_string());
        }
        let out = cmd.output().map_err(|e| Error::Exec(format!("cannot run native kernel: {e}")))?;
        if !out.status.success() {
            return Err(Error::Exec(format!(
                "native kernel exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let times_ns = String::from_utf8_lossy(&out.stdout)
            .lines()
            .map(|l| l.trim().parse::<f64>().map_err(|_| Error::Exec(format!("bad timing line `{l}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut outputs = Bindings::default();
        for name in stored_buffers(&self.program.body).into_keys() {
            let Some(d) = self.program.buffer(&name) else { continue };
            let bytes = fs::read(work.path().join(format!("{name}.out")))?;
            outputs.buffers.insert(name.clone(), Array::from_le_bytes(d.dtype, &bytes)?);
        }
        Ok(NativeRun { outputs, times_ns })
    }
}
