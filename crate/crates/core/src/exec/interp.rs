//! Tree-walking interpreter for stage-III programs.
//!
//! Names are resolved to slots once up front. Parallel loops run in a fixed
//! number of contiguous chunks on scoped threads; each chunk works on
//! private copies of the buffers it writes, merged back in chunk order, so
//! results do not depend on thread timing.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ir::simplify::{eval_binop, eval_cmp};
use crate::ir::{BinOp, BufferRole, CmpOp, Expr, IterKind, Layout, Program, Stage, Stmt};
use crate::storage::ValueDType;

use super::data::{Array, Bindings, ExecReport, Mode, Stats, Value};

/// Chunks a parallel loop is cut into, independent of the thread count.
pub const PARALLEL_CHUNKS: usize = 8;

/// Environment variable capping the worker threads of parallel loops.
pub const THREADS_ENV: &str = "SPARSEKIT_THREADS";

/// Worker threads used for parallel loops: `SPARSEKIT_THREADS` when it
/// holds a positive integer, the available parallelism otherwise.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

enum CE {
    Int(i64),
    Float(f64),
    Var(usize),
    Bin(BinOp, Box<CE>, Box<CE>, bool),
    Cmp(CmpOp, Box<CE>, Box<CE>),
    Load(usize, Box<CE>),
    Select(Box<CE>, Box<CE>, Box<CE>),
}

struct ParInfo {
    reduce: Vec<usize>,
    plain: Vec<usize>,
}

struct RegionSpec {
    buf: usize,
    lo: CE,
    ext: CE,
    write: bool,
}

enum CS {
    Store { buf: usize, idx: CE, value: CE, reduce: bool },
    Seq(Vec<CS>),
    Loop { var: usize, extent: CE, par: Option<ParInfo>, body: Box<CS> },
    Block {
        name: String,
        bindings: Vec<(usize, CE)>,
        regions: Vec<RegionSpec>,
        init: Option<(Vec<usize>, Box<CS>)>,
        body: Box<CS>,
    },
    If { cond: CE, then: Box<CS>, els: Option<Box<CS>> },
    Let { var: usize, value: CE, body: Box<CS> },
    While { cond: CE, body: Box<CS> },
    Alloc { buf: usize, dtype: ValueDType, size: usize, body: Box<CS> },
    Assert { cond: CE, msg: String },
}

struct Compiler {
    scope: Vec<(String, usize)>,
    nvars: usize,
    bufs: Vec<(String, usize)>,
    buf_names: Vec<String>,
}

impl Compiler {
    fn var(&self, v: &str) -> Result<usize> {
        self.scope
            .iter()
            .rev()
            .find(|(n, _)| n == v)
            .map(|x| x.1)
            .ok_or_else(|| Error::Exec(format!("unbound variable `{v}`")))
    }

    fn buf(&self, b: &str) -> Result<usize> {
        self.bufs
            .iter()
            .rev()
            .find(|(n, _)| n == b)
            .map(|x| x.1)
            .ok_or_else(|| Error::Exec(format!("unknown buffer `{b}`")))
    }

    fn bind(&mut self, v: &str) -> usize {
        let slot = self.nvars;
        self.nvars += 1;
        self.scope.push((v.to_string(), slot));
        slot
    }

    fn expr(&self, e: &Expr, count: bool) -> Result<CE> {
        Ok(match e {
            Expr::Int(v) => CE::Int(*v),
            Expr::Float(v) => CE::Float(*v),
            Expr::Var(v) => CE::Var(self.var(v)?),
            Expr::Bin(op, a, b) => {
                let counted = count && matches!(op, BinOp::Add | BinOp::Sub | BinOp::Mul);
                CE::Bin(*op, Box::new(self.expr(a, count)?), Box::new(self.expr(b, count)?), counted)
            }
            Expr::Cmp(op, a, b) => {
                CE::Cmp(*op, Box::new(self.expr(a, false)?), Box::new(self.expr(b, false)?))
            }
            Expr::Load(b, idx) => {
                if idx.len() != 1 {
                    return Err(Error::Exec(format!("load of `{b}` is not flat")));
                }
                CE::Load(self.buf(b)?, Box::new(self.expr(&idx[0], false)?))
            }
            Expr::Select(c, a, b) => CE::Select(
                Box::new(self.expr(c, false)?),
                Box::new(self.expr(a, count)?),
                Box::new(self.expr(b, count)?),
            ),
        })
    }

    fn stmt(&mut self, s: &Stmt) -> Result<CS> {
        Ok(match s {
            Stmt::Store { buffer, indices, value, reduce } => {
                if indices.len() != 1 {
                    return Err(Error::Exec(format!("store to `{buffer}` is not flat")));
                }
                CS::Store {
                    buf: self.buf(buffer)?,
                    idx: self.expr(&indices[0], false)?,
                    value: self.expr(value, true)?,
                    reduce: *reduce,
                }
            }
            Stmt::Seq(v) => CS::Seq(v.iter().map(|x| self.stmt(x)).collect::<Result<_>>()?),
            Stmt::Loop(l) => {
                let extent = self.expr(&l.extent, false)?;
                let par = if l.is_parallel() { Some(self.par_info(&l.body)?) } else { None };
                let n = self.scope.len();
                let var = self.bind(&l.var);
                let body = Box::new(self.stmt(&l.body)?);
                self.scope.truncate(n);
                CS::Loop { var, extent, par, body }
            }
            Stmt::Block(b) => {
                let values: Vec<CE> =
                    b.bindings.iter().map(|bd| self.expr(&bd.value, false)).collect::<Result<_>>()?;
                let n = self.scope.len();
                let mut bindings = Vec::new();
                let mut red = Vec::new();
                for (bd, v) in b.bindings.iter().zip(values) {
                    let slot = self.bind(&bd.var);
                    if bd.kind == IterKind::Reduction {
                        red.push(slot);
                    }
                    bindings.push((slot, v));
                }
                let mut regions = Vec::new();
                for (write, list) in [(false, &b.reads), (true, &b.writes)] {
                    for r in list {
                        if r.ranges.len() != 1 {
                            continue;
                        }
                        regions.push(RegionSpec {
                            buf: self.buf(&r.buffer)?,
                            lo: self.expr(&r.ranges[0].0, false)?,
                            ext: self.expr(&r.ranges[0].1, false)?,
                            write,
                        });
                    }
                }
                let init = match &b.init {
                    Some(i) => Some((red, Box::new(self.stmt(i)?))),
                    None => None,
                };
                let body = Box::new(self.stmt(&b.body)?);
                self.scope.truncate(n);
                CS::Block { name: b.name.clone(), bindings, regions, init, body }
            }
            Stmt::Search(_) => {
                return Err(Error::Stage("binary search blocks must be expanded before execution".into()))
            }
            Stmt::SpIter(_) => {
                return Err(Error::Stage("sparse iterations must be lowered before execution".into()))
            }
            Stmt::If { cond, then, els } => CS::If {
                cond: self.expr(cond, false)?,
                then: Box::new(self.stmt(then)?),
                els: match els {
                    Some(e) => Some(Box::new(self.stmt(e)?)),
                    None => None,
                },
            },
            Stmt::Let { var, value, body } => {
                let value = self.expr(value, false)?;
                let n = self.scope.len();
                let slot = self.bind(var);
                let body = Box::new(self.stmt(body)?);
                self.scope.truncate(n);
                CS::Let { var: slot, value, body }
            }
            Stmt::While { cond, body } => {
                CS::While { cond: self.expr(cond, false)?, body: Box::new(self.stmt(body)?) }
            }
            Stmt::Alloc { buffer, dtype, size, body } => {
                let slot = self.buf_names.len();
                self.buf_names.push(buffer.clone());
                self.bufs.push((buffer.clone(), slot));
                let body = self.stmt(body);
                self.bufs.pop();
                CS::Alloc { buf: slot, dtype: *dtype, size: *size, body: Box::new(body?) }
            }
            Stmt::Assert { cond, msg } => CS::Assert { cond: self.expr(cond, false)?, msg: msg.clone() },
        })
    }

    /// Buffers written inside a parallel loop body, excluding its own locals.
    fn par_info(&self, body: &Stmt) -> Result<ParInfo> {
        let mut locals = BTreeSet::new();
        crate::ir::visit::walk_stmt(body, &mut |x| {
            if let Stmt::Alloc { buffer, .. } = x {
                locals.insert(buffer.clone());
            }
        });
        let mut reduce = Vec::new();
        let mut plain = Vec::new();
        for (name, (r, p)) in crate::ir::visit::stored_buffers(body) {
            if locals.contains(&name) {
                continue;
            }
            let slot = self.buf(&name)?;
            if p || !r {
                plain.push(slot);
            } else {
                reduce.push(slot);
            }
        }
        Ok(ParInfo { reduce, plain })
    }
}

struct Frame {
    name: String,
    regions: Vec<(usize, i64, i64, bool)>,
}

#[derive(Clone)]
struct Machine<'a> {
    env: Vec<Value>,
    bufs: Vec<Arc<Array>>,
    names: &'a [String],
    checked: bool,
    stats: Stats,
    violations: Vec<String>,
    frames: Vec<Arc<Frame>>,
    /// Frame depth at which each buffer slot became live.
    live_since: Vec<usize>,
    in_parallel: bool,
}

const MAX_VIOLATIONS: usize = 64;

impl Machine<'_> {
    fn violation(&mut self, msg: String) {
        if self.violations.len() < MAX_VIOLATIONS {
            self.violations.push(msg);
        }
    }

    fn check_region(&mut self, buf: usize, at: i64, write: bool) {
        let since = self.live_since[buf];
        for f in self.frames[since.min(self.frames.len())..].iter() {
            let mut covered = false;
            let mut declared = false;
            for &(b, lo, hi, w) in &f.regions {
                if b == buf && w == write {
                    declared = true;
                    covered |= lo <= at && at < hi;
                }
            }
            if !covered {
                let msg = format!(
                    "{} of `{}`[{at}] outside {} region of block `{}`",
                    if write { "write" } else { "read" },
                    self.names[buf],
                    if declared { "the declared" } else { "any" },
                    f.name
                );
                if self.violations.len() < MAX_VIOLATIONS {
                    self.violations.push(msg);
                }
            }
        }
    }

    fn eval(&mut self, e: &CE) -> Result<Value> {
        Ok(match e {
            CE::Int(v) => Value::I(*v),
            CE::Float(v) => Value::F(*v),
            CE::Var(s) => self.env[*s],
            CE::Bin(op, a, b, counted) => {
                let x = self.eval(a)?;
                match op {
                    BinOp::And if !x.truthy() => return Ok(Value::I(0)),
                    BinOp::Or if x.truthy() => return Ok(Value::I(1)),
                    _ => {}
                }
                let y = self.eval(b)?;
                if *counted {
                    self.stats.flops += 1;
                }
                binop(*op, x, y)?
            }
            CE::Cmp(op, a, b) => {
                let x = self.eval(a)?;
                let y = self.eval(b)?;
                cmp_values(*op, x, y)
            }
            CE::Load(b, idx) => {
                let i = self.eval(idx)?.as_i64();
                self.stats.loads += 1;
                if self.checked {
                    self.check_region(*b, i, false);
                }
                let arr = &self.bufs[*b];
                if i < 0 {
                    return Err(self.oob(*b, i));
                }
                match arr.get(i as usize) {
                    Some(v) => v,
                    None => return Err(self.oob(*b, i)),
                }
            }
            CE::Select(c, a, b) => {
                if self.eval(c)?.truthy() {
                    self.eval(a)?
                } else {
                    self.eval(b)?
                }
            }
        })
    }

    fn oob(&self, b: usize, i: i64) -> Error {
        Error::Exec(format!(
            "out-of-bounds access `{}`[{i}] (length {})",
            self.names[b],
            self.bufs[b].len()
        ))
    }

    fn exec(&mut self, s: &CS) -> Result<()> {
        match s {
            CS::Store { buf, idx, value, reduce } => {
                let i = self.eval(idx)?.as_i64();
                let mut v = self.eval(value)?;
                self.stats.stores += 1;
                if self.checked {
                    self.check_region(*buf, i, true);
                    if let Value::F(x) = v {
                        if !x.is_finite() {
                            return Err(Error::Exec(format!(
                                "non-finite value stored to `{}`[{i}]",
                                self.names[*buf]
                            )));
                        }
                    }
                }
                if i < 0 || i as usize >= self.bufs[*buf].len() {
                    return Err(self.oob(*buf, i));
                }
                let arr = Arc::make_mut(&mut self.bufs[*buf]);
                if *reduce {
                    let old = arr.get(i as usize).unwrap();
                    v = binop(BinOp::Add, old, v)?;
                }
                arr.set(i as usize, v);
            }
            CS::Seq(v) => {
                for x in v {
                    self.exec(x)?;
                }
            }
            CS::Loop { var, extent, par, body } => {
                let n = self.eval(extent)?.as_i64();
                match par {
                    Some(info) if !self.in_parallel && n > 1 => self.run_parallel(*var, n, info, body)?,
                    _ => {
                        for x in 0..n {
                            self.env[*var] = Value::I(x);
                            self.exec(body)?;
                        }
                    }
                }
            }
            CS::Block { name, bindings, regions, init, body } => {
                for (slot, e) in bindings {
                    let v = self.eval(e)?;
                    self.env[*slot] = v;
                }
                if self.checked {
                    // region bounds are metadata: no checks, no counting
                    let stats = self.stats;
                    self.checked = false;
                    let mut rs = Vec::with_capacity(regions.len());
                    let mut failed = None;
                    for r in regions {
                        let bounds = self.eval(&r.lo).and_then(|lo| Ok((lo, self.eval(&r.ext)?)));
                        match bounds {
                            Ok((lo, ext)) => {
                                let lo = lo.as_i64();
                                rs.push((r.buf, lo, lo + ext.as_i64(), r.write));
                            }
                            Err(e) => failed = Some(e),
                        }
                    }
                    self.checked = true;
                    self.stats = stats;
                    if let Some(e) = failed {
                        return Err(Error::Exec(format!("region of block `{name}` not evaluable: {e}")));
                    }
                    self.frames.push(Arc::new(Frame { name: name.clone(), regions: rs }));
                }
                let result = (|| {
                    if let Some((red, init)) = init {
                        if red.iter().all(|s| self.env[*s] == Value::I(0)) {
                            self.exec(init)?;
                        }
                    }
                    self.exec(body)
                })();
                if self.checked {
                    self.frames.pop();
                }
                result?;
            }
            CS::If { cond, then, els } => {
                if self.eval(cond)?.truthy() {
                    self.exec(then)?;
                } else if let Some(e) = els {
                    self.exec(e)?;
                }
            }
            CS::Let { var, value, body } => {
                let v = self.eval(value)?;
                self.env[*var] = v;
                self.exec(body)?;
            }
            CS::While { cond, body } => {
                while self.eval(cond)?.truthy() {
                    self.exec(body)?;
                }
            }
            CS::Alloc { buf, dtype, size, body } => {
                let saved = std::mem::replace(&mut self.bufs[*buf], Arc::new(Array::zeros(*dtype, *size)));
                let since = std::mem::replace(&mut self.live_since[*buf], self.frames.len());
                let r = self.exec(body);
                self.bufs[*buf] = saved;
                self.live_since[*buf] = since;
                r?;
            }
            CS::Assert { cond, msg } => {
                if self.checked && !self.eval(cond)?.truthy() {
                    return Err(Error::Exec(format!("assertion failed: {msg}")));
                }
            }
        }
        Ok(())
    }

    fn run_parallel(&mut self, var: usize, n: i64, info: &ParInfo, body: &CS) -> Result<()> {
        let chunks = (PARALLEL_CHUNKS as i64).min(n);
        let ranges: Vec<(i64, i64)> =
            (0..chunks).map(|c| (n * c / chunks, n * (c + 1) / chunks)).collect();
        let mut workers = Vec::with_capacity(ranges.len());
        for _ in &ranges {
            let mut m = self.clone();
            m.in_parallel = true;
            m.stats = Stats::default();
            m.violations.clear();
            for &b in &info.reduce {
                m.bufs[b] = Arc::new(Array::zeros(self.bufs[b].dtype(), self.bufs[b].len()));
            }
            workers.push(m);
        }
        let threads = thread_count();
        let mut results: Vec<Result<Machine>> = Vec::with_capacity(workers.len());
        let mut jobs = workers.into_iter().zip(ranges.iter().copied()).peekable();
        while jobs.peek().is_some() {
            let wave: Vec<_> = jobs.by_ref().take(threads).collect();
            std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .into_iter()
                    .map(|(mut m, (lo, hi))| {
                        scope.spawn(move || {
                            for x in lo..hi {
                                m.env[var] = Value::I(x);
                                m.exec(body)?;
                            }
                            Ok(m)
                        })
                    })
                    .collect();
                results.extend(handles.into_iter().map(|h| h.join().expect("worker panicked")));
            });
        }
        let mut done = Vec::with_capacity(results.len());
        for r in results {
            done.push(r?);
        }
        for &b in &info.reduce {
            let total = Arc::make_mut(&mut self.bufs[b]);
            for m in &done {
                let part = &m.bufs[b];
                for i in 0..part.len() {
                    let v = part.get(i).unwrap();
                    if v.truthy() {
                        let old = total.get(i).unwrap();
                        total.set(i, binop(BinOp::Add, old, v)?);
                    }
                }
            }
        }
        for &b in &info.plain {
            let base = self.bufs[b].clone();
            let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
            let merged = Arc::make_mut(&mut self.bufs[b]);
            for (c, m) in done.iter().enumerate() {
                if Arc::ptr_eq(&m.bufs[b], &base) {
                    continue;
                }
                let part = &m.bufs[b];
                for i in 0..part.len() {
                    let v = part.get(i).unwrap();
                    if !same_bits(v, base.get(i).unwrap()) {
                        if let Some(prev) = owner.insert(i, c) {
                            return Err(Error::Exec(format!(
                                "race on `{}`[{i}] between parallel chunks {prev} and {c}",
                                self.names[b]
                            )));
                        }
                        merged.set(i, v);
                    }
                }
            }
        }
        for m in done {
            self.stats.add(&m.stats);
            for v in m.violations {
                self.violation(v);
            }
        }
        Ok(())
    }
}

fn same_bits(a: Value, b: Value) -> bool {
    match (a, b) {
        (Value::I(x), Value::I(y)) => x == y,
        (Value::F(x), Value::F(y)) => x.to_bits() == y.to_bits(),
        _ => false,
    }
}

pub(crate) fn cmp_values(op: CmpOp, x: Value, y: Value) -> Value {
    let r = match (x, y) {
        (Value::I(p), Value::I(q)) => eval_cmp(op, p, q),
        _ => {
            let (p, q) = (x.as_f64(), y.as_f64());
            match op {
                CmpOp::Lt => p < q,
                CmpOp::Le => p <= q,
                CmpOp::Eq => p == q,
                CmpOp::Ne => p != q,
                CmpOp::Gt => p > q,
                CmpOp::Ge => p >= q,
            }
        }
    };
    Value::I(r as i64)
}

pub(crate) fn binop(op: BinOp, x: Value, y: Value) -> Result<Value> {
    Ok(match (x, y) {
        (Value::I(a), Value::I(b)) => Value::I(
            eval_binop(op, a, b).ok_or_else(|| Error::Exec("integer division by zero".into()))?,
        ),
        _ => {
            let (a, b) = (x.as_f64(), y.as_f64());
            match op {
                BinOp::Add => Value::F(a + b),
                BinOp::Sub => Value::F(a - b),
                BinOp::Mul => Value::F(a * b),
                BinOp::FloorDiv => Value::F((a / b).floor()),
                BinOp::Mod => Value::F(a - (a / b).floor() * b),
                BinOp::Min => Value::F(a.min(b)),
                BinOp::Max => Value::F(a.max(b)),
                BinOp::And => Value::I((a != 0.0 && b != 0.0) as i64),
                BinOp::Or => Value::I((a != 0.0 || b != 0.0) as i64),
            }
        }
    })
}

/// Checks declared value hints of aux buffers.
fn check_hints(p: &Program, b: &Bindings, out: &mut Vec<String>) {
    for d in &p.buffers {
        let (Some((lo, hi)), Some(arr)) = (d.hint, b.buffers.get(&d.name)) else {
            continue;
        };
        let v = arr.to_f64();
        if let Some(x) = v.iter().find(|x| **x < lo as f64 || **x > hi as f64) {
            out.push(format!("`{}` holds {x}, outside hint [{lo}, {hi}]", d.name));
        }
        if d.role == BufferRole::Indptr {
            if v.windows(2).any(|w| w[1] < w[0]) {
                out.push(format!("indptr `{}` decreases", d.name));
            }
            if v.last().copied() != Some(hi as f64) {
                out.push(format!(
                    "indptr `{}` ends at {:?}, axis metadata says {hi}",
                    d.name,
                    v.last()
                ));
            }
        }
    }
}

/// Runs a stage-III program. Buffers not present in `b` are allocated as
/// zeros; params default to 0 when missing.
pub fn interpret(p: &Program, b: Bindings, mode: Mode) -> Result<ExecReport> {
    if p.stage != Stage::III {
        return Err(Error::Stage(format!("interpreter needs stage III, got stage {}", p.stage)));
    }
    let mut c = Compiler { scope: Vec::new(), nvars: 0, bufs: Vec::new(), buf_names: Vec::new() };
    let mut bufs = Vec::new();
    let mut b = b;
    for d in &p.buffers {
        let Layout::Dense(shape) = &d.layout else {
            return Err(Error::Stage(format!("buffer `{}` is not flat", d.name)));
        };
        let n: usize = shape.iter().product();
        let arr = match b.buffers.remove(&d.name) {
            Some(a) => {
                if a.len() != n {
                    return Err(Error::Exec(format!(
                        "buffer `{}` bound with length {}, declared {n}",
                        d.name,
                        a.len()
                    )));
                }
                if a.dtype() != d.dtype {
                    return Err(Error::Exec(format!(
                        "buffer `{}` bound as {}, declared {}",
                        d.name,
                        a.dtype().keyword(),
                        d.dtype.keyword()
                    )));
                }
                a
            }
            None => Array::zeros(d.dtype, n),
        };
        c.bufs.push((d.name.clone(), c.buf_names.len()));
        c.buf_names.push(d.name.clone());
        bufs.push(Arc::new(arr));
    }
    let mut param_slots = Vec::new();
    for name in &p.params {
        param_slots.push((c.bind(name), b.params.get(name).copied().unwrap_or(0)));
    }
    let code = c.stmt(&p.body)?;
    while bufs.len() < c.buf_names.len() {
        bufs.push(Arc::new(Array::I32(Vec::new())));
    }
    let mut violations = Vec::new();
    let checked = mode == Mode::Checked;
    if checked {
        let bound = Bindings {
            buffers: p
                .buffers
                .iter()
                .zip(&bufs)
                .map(|(d, a)| (d.name.clone(), (**a).clone()))
                .collect(),
            params: BTreeMap::new(),
        };
        check_hints(p, &bound, &mut violations);
    }
    let mut m = Machine {
        env: vec![Value::I(0); c.nvars],
        live_since: vec![0; bufs.len()],
        bufs,
        names: &c.buf_names,
        checked,
        stats: Stats::default(),
        violations,
        frames: Vec::new(),
        in_parallel: false,
    };
    for (slot, v) in param_slots {
        m.env[slot] = Value::I(v);
    }
    m.exec(&code)?;
    let outputs = Bindings {
        buffers: p
            .buffers
            .iter()
            .zip(m.bufs)
            .map(|(d, a)| (d.name.clone(), Arc::try_unwrap(a).unwrap_or_else(|a| (*a).clone())))
            .collect(),
        params: b.params,
    };
    Ok(ExecReport { outputs, stats: m.stats, violations: m.violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse;

    fn prog(body: &str) -> Program {
        parse(&format!(
            "program t stage III {{\n  buffer A i32 dense [8];\n  buffer Y i32 dense [8];\n  body {{\n{body}\n  }}\n}}\n"
        ))
        .unwrap()
    }

    fn ints(v: &[i32]) -> Array {
        Array::I32(v.to_vec())
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let seq = prog("for i < 8 { Y[i] = (A[i] * 2); }");
        let par = prog("for i < 8 @parallel { Y[i] = (A[i] * 2); }");
        let b = Bindings::default().with_buffer("A", ints(&[1, 2, 3, 4, 5, 6, 7, 8]));
        let r1 = interpret(&seq, b.clone(), Mode::Checked).unwrap();
        let r2 = interpret(&par, b, Mode::Checked).unwrap();
        assert_eq!(r1.outputs.get("Y").unwrap(), r2.outputs.get("Y").unwrap());
        assert_eq!(r2.outputs.get("Y").unwrap(), &ints(&[2, 4, 6, 8, 10, 12, 14, 16]));
    }

    #[test]
    fn parallel_reduction_merges_partials() {
        let p = prog("for i < 8 @parallel { Y[0] += A[i]; }");
        let b = Bindings::default().with_buffer("A", ints(&[1, 2, 3, 4, 5, 6, 7, 8]));
        let r = interpret(&p, b, Mode::Release).unwrap();
        assert_eq!(r.outputs.get("Y").unwrap().to_f64()[0], 36.0);
        assert_eq!(r.stats.stores, 8);
    }

    #[test]
    fn race_is_reported() {
        let p = prog("for i < 8 @parallel { Y[0] = i; }");
        let e = interpret(&p, Bindings::default(), Mode::Release).unwrap_err();
        assert!(e.to_string().contains("race"), "{e}");
    }

    #[test]
    fn out_of_bounds_is_an_error() {
        let p = prog("for i < 9 { Y[i] = 1; }");
        assert!(interpret(&p, Bindings::default(), Mode::Release).is_err());
    }

    #[test]
    fn assert_only_in_checked_mode() {
        let p = prog("assert (1 < 0) \"never\";");
        assert!(interpret(&p, Bindings::default(), Mode::Release).is_ok());
        assert!(interpret(&p, Bindings::default(), Mode::Checked).is_err());
    }

    #[test]
    fn while_loop_binary_search() {
        let p = prog(
            "alloc s i32 [2] {\n s[0] = 0; s[1] = 4;\n while (s[0] < s[1]) {\n let m = ((s[0] + s[1]) // 2) in {\n if (A[m] < 9) { s[0] = (m + 1); } else { s[1] = m; }\n }\n }\n Y[0] = s[0];\n }",
        );
        let b = Bindings::default().with_buffer("A", ints(&[1, 3, 9, 10, 0, 0, 0, 0]));
        let r = interpret(&p, b, Mode::Checked).unwrap();
        assert_eq!(r.outputs.get("Y").unwrap().to_f64()[0], 2.0);
    }

    #[test]
    fn region_violation_is_collected() {
        let p = prog(
            "for i < 4 {\n block b {\n bind v S = i;\n write Y[v:1];\n body {\n Y[(v + 1)] = 1;\n }\n }\n }",
        );
        let r = interpret(&p, Bindings::default(), Mode::Checked).unwrap();
        assert!(!r.violations.is_empty());
        let r = interpret(&p, Bindings::default(), Mode::Release).unwrap();
        assert!(r.violations.is_empty());
    }

    #[test]
    fn wrong_stage_rejected() {
        let p = Program::new("x", Stage::II);
        assert!(matches!(interpret(&p, Bindings::default(), Mode::Release), Err(Error::Stage(_))));
    }
}
