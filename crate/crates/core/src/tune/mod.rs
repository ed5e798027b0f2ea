//! Grid search over formats and schedule parameters.
//!
//! Each point is lowered, checked against the dense oracle once, and only
//! then timed. Timing compiles the point once and runs it `warmup +
//! repeats` times from the same inputs; the median of the timed runs is
//! reported. Converted storage is bound directly, so copy iterations stay
//! outside the timed region.

mod balance;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value as Json};

use crate::error::{Error, Result};
use crate::exec::{compiler_available, interpret, Mode, NativeKernel, Stats};
use crate::ir::visit::children;
use crate::ir::{Loop, Program, Stmt};
use crate::kernels::{compare, inject_fault, prepare, FormatPath, Instance, Op};
use crate::schedule::{parallel, rfactor, split, LoopRef};
use crate::storage::default_hyb_k;

pub use balance::{csr_balance, hyb_balance, load_balance};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum FormatChoice {
    Path(FormatPath),
    /// hyb with `k = k0 + k_offset`, `k0 = ceil(log2(nnz / rows))`.
    Hyb { c: usize, k_offset: i64 },
}

impl fmt::Display for FormatChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatChoice::Path(p) => write!(f, "{p}"),
            FormatChoice::Hyb { c, k_offset: 0 } => write!(f, "hyb:c={c},k=k0"),
            FormatChoice::Hyb { c, k_offset } => write!(f, "hyb:c={c},k=k0{k_offset:+}"),
        }
    }
}

impl FormatChoice {
    pub fn resolve(&self, inst: &Instance) -> Result<FormatPath> {
        match self {
            FormatChoice::Path(p) => Ok(p.clone()),
            FormatChoice::Hyb { c, k_offset } => {
                let s = &inst.spec;
                let k0 = default_hyb_k(s.nnz, s.m * s.relations.max(1)) as i64;
                let k = k0 + k_offset;
                if k < 0 {
                    return Err(Error::Tune(format!("k = {k0}{k_offset:+} is negative")));
                }
                Ok(FormatPath::Hyb { c: *c, k: Some(k as usize) })
            }
        }
    }
}

/// Axes of the grid. An empty axis contributes its default.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SearchSpace {
    /// Fixed formats to include.
    pub formats: Vec<FormatPath>,
    /// hyb partition counts.
    pub c: Vec<usize>,
    /// hyb bucket-count offsets around k0; `[0]` when empty.
    pub k_offsets: Vec<i64>,
    /// Split factors for the innermost feature loop.
    pub splits: Vec<usize>,
    pub parallel: Vec<bool>,
    /// Group sizes for a two-stage reduction of the feature loop (SDDMM).
    pub rfactors: Vec<usize>,
}

impl SearchSpace {
    /// `c ∈ {1, 2, 4, 8, 16}` with `k = k0`.
    pub fn hyb_grid() -> Self {
        SearchSpace { c: vec![1, 2, 4, 8, 16], ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Point {
    pub id: usize,
    pub format: FormatChoice,
    pub split: Option<usize>,
    pub parallel: bool,
    pub rfactor: Option<usize>,
}

impl Point {
    pub fn params(&self) -> Json {
        json!({
            "format": self.format.to_string(),
            "split": self.split,
            "parallel": self.parallel,
            "rfactor": self.rfactor,
        })
    }
}

fn or_default<T: Clone>(v: &[T], d: T) -> Vec<T> {
    if v.is_empty() {
        vec![d]
    } else {
        v.to_vec()
    }
}

/// Cartesian product in a fixed order: formats, then split, parallel,
/// rfactor. Duplicate axis values are dropped.
pub fn enumerate(space: &SearchSpace) -> Vec<Point> {
    fn dedup<T: PartialEq + Clone>(v: Vec<T>) -> Vec<T> {
        let mut out: Vec<T> = Vec::new();
        for x in v {
            if !out.contains(&x) {
                out.push(x);
            }
        }
        out
    }
    let mut formats: Vec<FormatChoice> = space.formats.iter().cloned().map(FormatChoice::Path).collect();
    for &c in &space.c {
        for &k_offset in &or_default(&space.k_offsets, 0) {
            formats.push(FormatChoice::Hyb { c, k_offset });
        }
    }
    let formats = dedup(or_default(&formats, FormatChoice::Path(FormatPath::Csr)));
    let splits = dedup(or_default(&space.splits.iter().map(|&s| Some(s)).collect::<Vec<_>>(), None));
    let pars = dedup(or_default(&space.parallel, false));
    let rfs = dedup(or_default(&space.rfactors.iter().map(|&s| Some(s)).collect::<Vec<_>>(), None));
    let mut out = Vec::new();
    for f in &formats {
        for &split in &splits {
            for &par in &pars {
                for &rf in &rfs {
                    out.push(Point { id: out.len(), format: f.clone(), split, parallel: par, rfactor: rf });
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Backend {
    /// Emitted C, compiled with the system compiler.
    Native,
    Interpreter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialOptions {
    pub warmup: usize,
    pub repeats: usize,
    pub flush_cache: bool,
    /// Defaults to native when a C compiler is found.
    pub backend: Backend,
    /// Collect interpreter operation counts for each valid point.
    pub count_ops: bool,
    /// Point id whose build gets a deliberate wrong result.
    pub fault: Option<usize>,
}

impl Default for TrialOptions {
    fn default() -> Self {
        TrialOptions {
            warmup: 10,
            repeats: 100,
            flush_cache: false,
            backend: if compiler_available() { Backend::Native } else { Backend::Interpreter },
            count_ops: true,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub point: Point,
    /// The resolved format, when resolution succeeded.
    pub format: Option<String>,
    pub median_ns: Option<f64>,
    pub stats: Option<Stats>,
    /// Lowered, ran, and matched the oracle.
    pub valid: bool,
    /// The oracle comparison was performed.
    pub checked: bool,
    pub error: Option<String>,
    pub padding_ratio: Option<f64>,
    /// Max over buckets of max/mean useful row work.
    pub load_balance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TuneReport {
    pub backend: Backend,
    pub trials: Vec<TrialResult>,
    /// Index into `trials`.
    pub best: usize,
}

impl TuneReport {
    pub fn best(&self) -> &TrialResult {
        &self.trials[self.best]
    }

    pub fn to_json(&self) -> Json {
        let rows: Vec<Json> = self
            .trials
            .iter()
            .enumerate()
            .map(|(i, t)| {
                json!({
                    "point": t.point.id,
                    "params": t.point.params(),
                    "format": t.format,
                    "median_ns": t.median_ns,
                    "flops": t.stats.map(|s| s.flops),
                    "loads": t.stats.map(|s| s.loads),
                    "valid": t.valid,
                    "best": i == self.best,
                    "padding_ratio": t.padding_ratio,
                    "load_balance": t.load_balance,
                    "error": t.error,
                })
            })
            .collect();
        json!({ "backend": self.backend, "trials": rows })
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Leaf compute blocks with the loops enclosing them, outermost first.
fn leaf_blocks(p: &Program) -> Vec<(String, Vec<Loop>)> {
    fn go(s: &Stmt, stack: &mut Vec<Loop>, out: &mut Vec<(String, Vec<Loop>)>) {
        match s {
            Stmt::Loop(l) => {
                stack.push(l.clone());
                go(&l.body, stack, out);
                stack.pop();
            }
            Stmt::Block(b) => {
                let mut nested = false;
                crate::ir::visit::walk_stmt(&b.body, &mut |x| nested |= matches!(x, Stmt::Block(_)));
                if !nested && !b.attrs.contains_key("sparse.copy") {
                    out.push((b.name.clone(), stack.clone()));
                }
                for c in children(s) {
                    go(c, stack, out);
                }
            }
            _ => {
                for c in children(s) {
                    go(c, stack, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    go(&p.body, &mut Vec::new(), &mut out);
    out
}

fn feature_extent(op: Op, inst: &Instance) -> i64 {
    match op {
        Op::RGMS => inst.spec.d_out as i64,
        _ => inst.spec.d as i64,
    }
}

/// Applies a point's schedule parameters to a stage-II program. The
/// feature loop of each leaf block is the innermost enclosing loop whose
/// extent is the dense feature size.
pub fn apply_point(p2: &Program, point: &Point, feature: i64) -> Result<Program> {
    let mut p = p2.clone();
    let feature_loop = |p: &Program, block: &str| -> Option<LoopRef> {
        leaf_blocks(p)
            .into_iter()
            .find(|(b, _)| b == block)
            .and_then(|(_, loops)| loops.into_iter().rev().find(|l| l.extent.as_int() == Some(feature)))
            .map(|l| LoopRef::new(block, &l.var))
    };
    let blocks: Vec<String> = leaf_blocks(&p).into_iter().map(|(b, _)| b).collect();
    for b in &blocks {
        if let Some(g) = point.rfactor {
            let r = feature_loop(&p, b).ok_or_else(|| Error::Tune(format!("no feature loop around `{b}`")))?;
            p = rfactor(&p, &r, g as i64)?;
        }
        if let Some(f) = point.split {
            if let Some(r) = feature_loop(&p, b) {
                p = split(&p, &r, f as i64)?;
            }
        }
    }
    if point.parallel {
        let mut done = Vec::new();
        for (b, loops) in leaf_blocks(&p) {
            let Some(outer) = loops.first() else { continue };
            if done.contains(&outer.var) {
                continue;
            }
            p = parallel(&p, &LoopRef::new(&b, &outer.var))?;
            done.push(outer.var.clone());
        }
    }
    Ok(p)
}

fn measure(
    inst: &Instance,
    point: &Point,
    opts: &TrialOptions,
    backend: Backend,
    want: &crate::kernels::Oracle,
) -> std::result::Result<TrialResult, (TrialResult, Error)> {
    let mut r = TrialResult {
        point: point.clone(),
        format: None,
        median_ns: None,
        stats: None,
        valid: false,
        checked: false,
        error: None,
        padding_ratio: None,
        load_balance: None,
    };
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(e) => return Err((r, e)),
            }
        };
    }
    let path = attempt!(point.format.resolve(inst));
    r.format = Some(path.to_string());
    let prep = attempt!(prepare(inst, &path));
    r.padding_ratio = Some(prep.padding_ratio);
    r.load_balance = load_balance(inst, &path).ok().flatten();
    let feature = feature_extent(inst.spec.op, inst);
    let sched = |p: &Program| apply_point(p, point, feature);
    let mut p3 = attempt!(prep.compile(true, Some(&sched)));
    if opts.fault == Some(point.id) {
        p3 = inject_fault(&p3, inst.output_buffer());
    }
    let b = prep.bindings(inst, true);
    let (outputs, times) = match backend {
        Backend::Native => {
            let k = attempt!(NativeKernel::compile(&p3));
            let run = attempt!(k.run(&b, opts.warmup, opts.repeats, opts.flush_cache));
            (run.outputs, run.times_ns)
        }
        Backend::Interpreter => {
            let mut times = Vec::with_capacity(opts.repeats);
            let mut last = None;
            for i in 0..opts.warmup + opts.repeats {
                let t0 = Instant::now();
                let rep = attempt!(interpret(&p3, b.clone(), Mode::Release));
                if i >= opts.warmup {
                    times.push(t0.elapsed().as_nanos() as f64);
                }
                last = Some(rep.outputs);
            }
            let outputs = match last {
                Some(o) => o,
                None => attempt!(interpret(&p3, b.clone(), Mode::Release)).outputs,
            };
            (outputs, times)
        }
    };
    let got = attempt!(inst.output_values(&outputs));
    r.checked = true;
    if let Err(m) = compare(&got, want, inst.spec.dtype) {
        return Err((r, Error::Tune(format!("wrong result: {m}"))));
    }
    if opts.count_ops {
        r.stats = Some(attempt!(interpret(&p3, b, Mode::Release)).stats);
    }
    r.median_ns = Some(median(&times));
    r.valid = true;
    Ok(r)
}

/// Runs every point of `space` on `inst`, sequentially.
pub fn run_trials(inst: &Instance, space: &SearchSpace, opts: &TrialOptions) -> Result<TuneReport> {
    run_points(inst, &enumerate(space), opts)
}

pub fn run_points(inst: &Instance, points: &[Point], opts: &TrialOptions) -> Result<TuneReport> {
    if opts.repeats == 0 {
        return Err(Error::Tune("repeats must be at least 1".into()));
    }
    let backend = if opts.backend == Backend::Native && !compiler_available() {
        Backend::Interpreter
    } else {
        opts.backend
    };
    let want = inst.oracle()?;
    let mut trials = Vec::new();
    for p in points {
        trials.push(match measure(inst, p, opts, backend, &want) {
            Ok(t) => t,
            Err((mut t, e)) => {
                t.valid = false;
                t.error = Some(e.to_string());
                t
            }
        });
    }
    let best = trials
        .iter()
        .enumerate()
        .filter(|(_, t)| t.valid)
        .min_by(|a, b| a.1.median_ns.unwrap().total_cmp(&b.1.median_ns.unwrap()))
        .map(|(i, _)| i)
        .ok_or_else(|| {
            let why: BTreeMap<usize, String> =
                trials.iter().map(|t| (t.point.id, t.error.clone().unwrap_or_default())).collect();
            Error::Tune(format!("no valid point: {why:?}"))
        })?;
    Ok(TuneReport { backend, trials, best })
}

#[cfg(test)]
mod tests;
