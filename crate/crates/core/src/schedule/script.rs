//! Line-oriented schedule scripts:
//!
//! ```text
//! # comments and blank lines are ignored
//! split spmm.j 4
//! reorder spmm.k spmm.j
//! fuse spmm_0.i spmm.j
//! parallel spmm_0.i
//! unroll spmm.k 4
//! vectorize spmm.k 8
//! cache_read spmm X
//! cache_write spmm Y
//! rfactor sddmm.k 8
//! ```

use crate::error::{Error, Result};
use crate::ir::{Annotation, Program};

use super::{annotate, cache_read, cache_write, fuse, reorder, rfactor, split, LoopRef};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScheduleOp {
    Split(LoopRef, i64),
    Reorder(Vec<LoopRef>),
    Fuse(LoopRef, LoopRef),
    Annotate(LoopRef, Annotation),
    CacheRead { block: String, buffer: String },
    CacheWrite { block: String, buffer: String },
    Rfactor(LoopRef, i64),
}

impl ScheduleOp {
    pub fn apply(&self, p: &Program) -> Result<Program> {
        match self {
            ScheduleOp::Split(r, f) => split(p, r, *f),
            ScheduleOp::Reorder(rs) => reorder(p, rs),
            ScheduleOp::Fuse(a, b) => fuse(p, a, b),
            ScheduleOp::Annotate(r, a) => annotate(p, r, *a),
            ScheduleOp::CacheRead { block, buffer } => cache_read(p, block, buffer),
            ScheduleOp::CacheWrite { block, buffer } => cache_write(p, block, buffer),
            ScheduleOp::Rfactor(r, f) => rfactor(p, r, *f),
        }
    }
}

fn parse_line(words: &[&str]) -> std::result::Result<ScheduleOp, String> {
    let lref = |s: &str| s.parse::<LoopRef>().map_err(|e| e.to_string());
    let num = |s: &str| s.parse::<i64>().map_err(|_| format!("`{s}` is not an integer"));
    let arity = |n: usize| {
        if words.len() == n + 1 {
            Ok(())
        } else {
            Err(format!("`{}` takes {n} argument(s), got {}", words[0], words.len() - 1))
        }
    };
    Ok(match words[0] {
        "split" => {
            arity(2)?;
            ScheduleOp::Split(lref(words[1])?, num(words[2])?)
        }
        "reorder" => {
            if words.len() < 3 {
                return Err("`reorder` needs at least two loops".into());
            }
            ScheduleOp::Reorder(words[1..].iter().map(|w| lref(w)).collect::<std::result::Result<_, _>>()?)
        }
        "fuse" => {
            arity(2)?;
            ScheduleOp::Fuse(lref(words[1])?, lref(words[2])?)
        }
        "parallel" => {
            arity(1)?;
            ScheduleOp::Annotate(lref(words[1])?, Annotation::Parallel)
        }
        "unroll" | "vectorize" => {
            arity(2)?;
            let n = u32::try_from(num(words[2])?).map_err(|_| "factor out of range".to_string())?;
            let a = if words[0] == "unroll" { Annotation::Unroll(n) } else { Annotation::Vectorize(n) };
            ScheduleOp::Annotate(lref(words[1])?, a)
        }
        "cache_read" | "cache_write" => {
            arity(2)?;
            let (block, buffer) = (words[1].to_string(), words[2].to_string());
            if words[0] == "cache_read" {
                ScheduleOp::CacheRead { block, buffer }
            } else {
                ScheduleOp::CacheWrite { block, buffer }
            }
        }
        "rfactor" => {
            arity(2)?;
            ScheduleOp::Rfactor(lref(words[1])?, num(words[2])?)
        }
        other => return Err(format!("unknown schedule primitive `{other}`")),
    })
}

pub fn parse_script(src: &str) -> Result<Vec<ScheduleOp>> {
    let mut ops = Vec::new();
    for (n, line) in src.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let col = line.len() - line.trim_start().len() + 1;
        ops.push(parse_line(&words).map_err(|msg| Error::Parse { line: n + 1, col, msg })?);
    }
    Ok(ops)
}

/// Parses and applies a script in order, stopping at the first failure.
pub fn apply_script(p: &Program, src: &str) -> Result<Program> {
    let mut p = p.clone();
    for (i, op) in parse_script(src)?.iter().enumerate() {
        p = op.apply(&p).map_err(|e| match e {
            Error::Schedule(m) => Error::Schedule(format!("step {}: {m}", i + 1)),
            e => e,
        })?;
    }
    Ok(p)
}
