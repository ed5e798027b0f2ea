//! Read/write region analysis for blocks.
//!
//! Intervals are symbolic and inclusive. Variables bound outside a block stay
//! symbolic; variables bound inside it are replaced by their ranges. Loads may
//! appear in bounds only from buffers nothing writes, and are clamped to the
//! buffer so bounds can always be evaluated. Anything else widens the
//! dimension to its full extent.

use std::collections::{BTreeMap, BTreeSet};

use crate::axes::AxisKind;
use crate::ir::simplify::{normalize, simplify_expr};
use crate::ir::visit::stored_buffers;
use crate::ir::{BinOp, Block, Expr, Layout, Program, Region, SearchMode, Stmt};

type Iv = Option<(Expr, Expr)>;

struct Ctx<'a> {
    p: &'a Program,
    written: BTreeSet<String>,
    env: BTreeMap<String, Iv>,
    /// Allocations inside the block being analyzed.
    locals: BTreeSet<String>,
    local_sizes: BTreeMap<String, i64>,
}

#[derive(Default)]
struct Acc {
    /// (buffer, write) → per-dimension union
    map: BTreeMap<(String, bool), Vec<Iv>>,
    order: Vec<(String, bool)>,
}

fn is_point(iv: &Iv) -> bool {
    matches!(iv, Some((a, b)) if a == b)
}

fn smin(a: Expr, b: Expr) -> Expr {
    let d = normalize(&a.clone().sub(b.clone()));
    match d.as_int() {
        Some(v) if v <= 0 => a,
        Some(_) => b,
        None => Expr::bin(BinOp::Min, a, b),
    }
}

fn smax(a: Expr, b: Expr) -> Expr {
    let d = normalize(&a.clone().sub(b.clone()));
    match d.as_int() {
        Some(v) if v >= 0 => a,
        Some(_) => b,
        None => Expr::bin(BinOp::Max, a, b),
    }
}

impl Ctx<'_> {
    fn dims(&self, buffer: &str) -> Vec<i64> {
        if let Some(&n) = self.local_sizes.get(buffer) {
            return vec![n];
        }
        let Some(d) = self.p.buffer(buffer) else {
            return Vec::new();
        };
        match &d.layout {
            Layout::Dense(shape) => shape.iter().map(|&x| x as i64).collect(),
            Layout::Sparse(axes) => axes
                .iter()
                .map(|a| match self.p.axis(a) {
                    Some(ax) if ax.kind == AxisKind::SparseFixed => ax.nnz_cols.unwrap_or(0) as i64,
                    Some(ax) => ax.length as i64,
                    None => 0,
                })
                .collect(),
        }
    }

    fn interval(&self, e: &Expr) -> Iv {
        match e {
            Expr::Int(_) => Some((e.clone(), e.clone())),
            Expr::Float(_) => None,
            Expr::Var(v) => match self.env.get(v) {
                Some(iv) => iv.clone(),
                None => Some((e.clone(), e.clone())),
            },
            Expr::Bin(op, a, b) => {
                let (x, y) = (self.interval(a)?, self.interval(b)?);
                let point = x.0 == x.1 && y.0 == y.1;
                if point {
                    let v = simplify_expr(&Expr::bin(*op, x.0, y.0));
                    return Some((v.clone(), v));
                }
                match op {
                    BinOp::Add => Some((x.0.add(y.0), x.1.add(y.1))),
                    BinOp::Sub => Some((x.0.sub(y.1), x.1.sub(y.0))),
                    BinOp::Mul => {
                        let (v, c) = match (x.0.as_int(), y.0.as_int()) {
                            (_, Some(c)) if y.0 == y.1 => (x, c),
                            (Some(c), _) if x.0 == x.1 => (y, c),
                            _ => return None,
                        };
                        let (lo, hi) = (v.0.mul(Expr::int(c)), v.1.mul(Expr::int(c)));
                        Some(if c >= 0 { (lo, hi) } else { (hi, lo) })
                    }
                    BinOp::FloorDiv => match y.0.as_int() {
                        Some(c) if c > 0 && y.0 == y.1 => {
                            Some((x.0.floordiv(Expr::int(c)), x.1.floordiv(Expr::int(c))))
                        }
                        _ => None,
                    },
                    BinOp::Mod => match y.0.as_int() {
                        Some(c) if c > 0 && y.0 == y.1 => Some((Expr::int(0), Expr::int(c - 1))),
                        _ => None,
                    },
                    BinOp::Min => Some((smin(x.0, y.0), smin(x.1, y.1))),
                    BinOp::Max => Some((smax(x.0, y.0), smax(x.1, y.1))),
                    BinOp::And | BinOp::Or => Some((Expr::int(0), Expr::int(1))),
                }
            }
            Expr::Cmp(op, a, b) => {
                let (x, y) = (self.interval(a), self.interval(b));
                if is_point(&x) && is_point(&y) {
                    let v = Expr::cmp(*op, x.unwrap().0, y.unwrap().0);
                    return Some((v.clone(), v));
                }
                Some((Expr::int(0), Expr::int(1)))
            }
            Expr::Select(c, a, b) => {
                let (x, y) = (self.interval(a)?, self.interval(b)?);
                let cv = self.interval(c);
                if is_point(&cv) && x.0 == x.1 && y.0 == y.1 {
                    let v = Expr::select(cv.unwrap().0, x.0, y.0);
                    return Some((v.clone(), v));
                }
                Some((smin(x.0, y.0), smax(x.1, y.1)))
            }
            Expr::Load(buffer, idx) => {
                if self.local_sizes.contains_key(buffer) {
                    return None;
                }
                let decl = self.p.buffer(buffer)?;
                let hint = decl.hint.map(|(lo, hi)| (Expr::int(lo), Expr::int(hi)));
                let dense = matches!(decl.layout, Layout::Dense(_));
                if self.written.contains(buffer) || self.locals.contains(buffer) || !dense {
                    return hint;
                }
                let dims = self.dims(buffer);
                let mut clamped = Vec::new();
                for (d, i) in idx.iter().enumerate() {
                    match self.interval(i) {
                        Some((lo, hi)) if lo == hi => {
                            let n = dims.get(d).copied().unwrap_or(1).max(1);
                            let c = match lo.as_int() {
                                Some(v) if v >= 0 && v < n => lo,
                                _ => Expr::bin(
                                    BinOp::Min,
                                    Expr::bin(BinOp::Max, lo, Expr::int(0)),
                                    Expr::int(n - 1),
                                ),
                            };
                            clamped.push(c);
                        }
                        _ => return hint,
                    }
                }
                let v = Expr::Load(buffer.clone(), clamped);
                Some((v.clone(), v))
            }
        }
    }

    fn record(&self, acc: &mut Acc, buffer: &str, idx: &[Expr], write: bool) {
        if self.locals.contains(buffer) {
            return;
        }
        let ivs: Vec<Iv> = idx
            .iter()
            .map(|i| self.interval(i).map(|(a, b)| (simplify_expr(&a), simplify_expr(&b))))
            .collect();
        let key = (buffer.to_string(), write);
        match acc.map.get_mut(&key) {
            None => {
                acc.order.push(key.clone());
                acc.map.insert(key, ivs);
            }
            Some(prev) => {
                for (p, n) in prev.iter_mut().zip(ivs) {
                    *p = match (p.take(), n) {
                        (Some((a, b)), Some((c, d))) => Some((smin(a, c), smax(b, d))),
                        _ => None,
                    };
                }
            }
        }
    }

    fn exprs(&self, acc: &mut Acc, e: &Expr) {
        crate::ir::visit::walk_expr(e, &mut |x| {
            if let Expr::Load(b, idx) = x {
                self.record(acc, b, idx, false);
            }
        });
    }

    fn bind(&mut self, var: &str, iv: Iv) -> (String, Option<Iv>) {
        (var.to_string(), self.env.insert(var.to_string(), iv))
    }

    fn unbind(&mut self, saved: (String, Option<Iv>)) {
        match saved.1 {
            Some(v) => self.env.insert(saved.0, v),
            None => self.env.remove(&saved.0),
        };
    }

    /// Accesses made while executing `s`, given the current environment.
    fn collect(&mut self, acc: &mut Acc, s: &Stmt) {
        match s {
            Stmt::Store { buffer, indices, value, .. } => {
                for i in indices {
                    self.exprs(acc, i);
                }
                self.exprs(acc, value);
                self.record(acc, buffer, indices, true);
            }
            Stmt::Seq(v) => v.iter().for_each(|x| self.collect(acc, x)),
            Stmt::SpIter(it) => self.collect(acc, &it.body),
            Stmt::Loop(l) => {
                self.exprs(acc, &l.extent);
                let iv = self.interval(&l.extent).map(|(_, hi)| (Expr::int(0), hi.sub(Expr::int(1))));
                let saved = self.bind(&l.var, iv);
                self.collect(acc, &l.body);
                self.unbind(saved);
            }
            Stmt::Block(b) => {
                let mut saved = Vec::new();
                let ivs: Vec<Iv> = b.bindings.iter().map(|bd| self.interval(&bd.value)).collect();
                for bd in &b.bindings {
                    self.exprs(acc, &bd.value);
                }
                for (bd, iv) in b.bindings.iter().zip(ivs) {
                    saved.push(self.bind(&bd.var, iv));
                }
                if let Some(i) = &b.init {
                    self.collect(acc, i);
                }
                self.collect(acc, &b.body);
                for s in saved.into_iter().rev() {
                    self.unbind(s);
                }
            }
            Stmt::Search(sb) => {
                self.exprs(acc, &sb.lo);
                self.exprs(acc, &sb.hi);
                self.exprs(acc, &sb.key);
                let (lo, hi) = (self.interval(&sb.lo), self.interval(&sb.hi));
                let seg = match (&lo, &hi) {
                    (Some((l, _)), Some((_, h))) => Some((l.clone(), h.clone().sub(Expr::int(1)))),
                    _ => None,
                };
                if let Some(d) = self.p.buffer(&sb.array) {
                    if !self.locals.contains(&sb.array) {
                        let key = (sb.array.clone(), false);
                        let iv = if d.ndim() == 1 { vec![seg.clone()] } else { vec![None; d.ndim()] };
                        match acc.map.get_mut(&key) {
                            None => {
                                acc.order.push(key.clone());
                                acc.map.insert(key, iv);
                            }
                            Some(prev) => {
                                for (p, n) in prev.iter_mut().zip(iv) {
                                    *p = match (p.take(), n) {
                                        (Some((a, b)), Some((c, d))) => Some((smin(a, c), smax(b, d))),
                                        _ => None,
                                    };
                                }
                            }
                        }
                    }
                }
                let width = match (lo, hi) {
                    (Some((l, _)), Some((_, h))) => Some(h.sub(l)),
                    _ => None,
                };
                let res = width.map(|w| match sb.mode {
                    SearchMode::Find => (Expr::int(0), w),
                    SearchMode::Upper => (Expr::int(0), w.sub(Expr::int(1))),
                });
                let s1 = self.bind(&sb.result, res);
                let s2 = self.bind(&sb.found, Some((Expr::int(0), Expr::int(1))));
                self.collect(acc, &sb.body);
                self.unbind(s2);
                self.unbind(s1);
            }
            Stmt::If { cond, then, els } => {
                self.exprs(acc, cond);
                self.collect(acc, then);
                if let Some(e) = els {
                    self.collect(acc, e);
                }
            }
            Stmt::Let { var, value, body } => {
                self.exprs(acc, value);
                let iv = self.interval(value);
                let saved = self.bind(var, iv);
                self.collect(acc, body);
                self.unbind(saved);
            }
            Stmt::While { cond, body } => {
                self.exprs(acc, cond);
                self.collect(acc, body);
            }
            Stmt::Alloc { buffer, size, body, .. } => {
                let fresh = self.locals.insert(buffer.clone());
                let prev = self.local_sizes.insert(buffer.clone(), *size as i64);
                self.collect(acc, body);
                if fresh {
                    self.locals.remove(buffer);
                }
                match prev {
                    Some(v) => self.local_sizes.insert(buffer.clone(), v),
                    None => self.local_sizes.remove(buffer),
                };
            }
            Stmt::Assert { cond, .. } => self.exprs(acc, cond),
        }
    }

    fn regions(&self, acc: Acc) -> (Vec<Region>, Vec<Region>) {
        let (mut reads, mut writes) = (Vec::new(), Vec::new());
        let mut keys = acc.order.clone();
        keys.sort();
        for key in keys {
            let ivs = &acc.map[&key];
            let dims = self.dims(&key.0);
            let ranges = ivs
                .iter()
                .enumerate()
                .map(|(d, iv)| match iv {
                    Some((lo, hi)) => {
                        let lo = normalize(lo);
                        let ext = normalize(&hi.clone().sub(lo.clone()).add(Expr::int(1)));
                        (lo, ext)
                    }
                    None => (Expr::int(0), Expr::int(dims.get(d).copied().unwrap_or(0))),
                })
                .collect();
            let r = Region { buffer: key.0.clone(), ranges };
            if key.1 {
                writes.push(r);
            } else {
                reads.push(r);
            }
        }
        (reads, writes)
    }

    fn annotate(&mut self, s: &Stmt) -> Stmt {
        match s {
            Stmt::Block(b) => {
                let mut acc = Acc::default();
                {
                    let saved_env = std::mem::take(&mut self.env);
                    let locals = std::mem::take(&mut self.locals);
                    if let Some(i) = &b.init {
                        self.collect(&mut acc, i);
                    }
                    self.collect(&mut acc, &b.body);
                    self.env = saved_env;
                    self.locals = locals;
                }
                let (reads, writes) = self.regions(acc);
                let mut nb = Block { reads, writes, ..b.clone() };
                nb.init = b.init.as_ref().map(|i| Box::new(self.annotate(i)));
                nb.body = Box::new(self.annotate(&b.body));
                Stmt::Block(nb)
            }
            Stmt::Alloc { buffer, dtype, size, body } => {
                let prev = self.local_sizes.insert(buffer.clone(), *size as i64);
                let body = self.annotate(body);
                match prev {
                    Some(v) => self.local_sizes.insert(buffer.clone(), v),
                    None => self.local_sizes.remove(buffer),
                };
                Stmt::Alloc { buffer: buffer.clone(), dtype: *dtype, size: *size, body: Box::new(body) }
            }
            Stmt::Seq(v) => Stmt::Seq(v.iter().map(|x| self.annotate(x)).collect()),
            Stmt::Loop(l) => {
                let mut l = l.clone();
                l.body = Box::new(self.annotate(&l.body));
                Stmt::Loop(l)
            }
            Stmt::Search(sb) => {
                let mut sb = sb.clone();
                sb.body = Box::new(self.annotate(&sb.body));
                Stmt::Search(sb)
            }
            Stmt::If { cond, then, els } => Stmt::If {
                cond: cond.clone(),
                then: Box::new(self.annotate(then)),
                els: els.as_ref().map(|e| Box::new(self.annotate(e))),
            },
            Stmt::Let { var, value, body } => {
                Stmt::Let { var: var.clone(), value: value.clone(), body: Box::new(self.annotate(body)) }
            }
            Stmt::While { cond, body } => {
                Stmt::While { cond: cond.clone(), body: Box::new(self.annotate(body)) }
            }
            Stmt::SpIter(it) => {
                let mut it = it.clone();
                it.body = Box::new(self.annotate(&it.body));
                Stmt::SpIter(it)
            }
            other => other.clone(),
        }
    }
}

/// Recomputes the read/write regions of every block.
pub fn analyze_regions(p: &Program) -> Program {
    let written = stored_buffers(&p.body).into_keys().collect();
    let mut c = Ctx {
        p,
        written,
        env: BTreeMap::new(),
        locals: BTreeSet::new(),
        local_sizes: BTreeMap::new(),
    };
    let body = c.annotate(&p.body);
    Program { body, ..p.clone() }
}
