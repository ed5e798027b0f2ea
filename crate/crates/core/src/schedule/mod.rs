//! Stage-II schedule primitives. Every primitive takes a program and returns
//! a new one with regions recomputed; the input is never modified.
//!
//! Loops are named `block.var`: the loop binding `var` that either encloses
//! `block` or sits inside its body.

mod cache;
mod rfactor;
mod script;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ir::visit::{bound_vars, children, expr_uses_var, subst_stmt, walk_stmt};
use crate::ir::simplify::simplify_expr;
use crate::ir::{validate, Annotation, BinOp, Expr, Loop, Program, Stage, Stmt};
use crate::lower::analyze_regions;

pub use cache::{cache_read, cache_write};
pub use rfactor::rfactor;
pub use script::{apply_script, parse_script, ScheduleOp};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopRef {
    pub block: String,
    pub var: String,
}

impl LoopRef {
    pub fn new(block: &str, var: &str) -> Self {
        LoopRef { block: block.to_string(), var: var.to_string() }
    }
}

impl fmt::Display for LoopRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.block, self.var)
    }
}

impl FromStr for LoopRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.rsplit_once('.') {
            Some((b, v)) if !b.is_empty() && !v.is_empty() => Ok(LoopRef::new(b, v)),
            _ => Err(Error::Schedule(format!("`{s}` is not of the form block.var"))),
        }
    }
}

pub(crate) fn require_stage2(p: &Program) -> Result<()> {
    if p.stage != Stage::II {
        return Err(Error::Stage(format!("schedules apply to stage II, got {}", p.stage)));
    }
    Ok(())
}

/// Re-derives regions and checks the result.
pub(crate) fn finish(p: Program) -> Result<Program> {
    let p = analyze_regions(&p);
    validate(&p).map_err(|v| Error::Schedule(v.join("; ")))?;
    Ok(p)
}

/// Names used anywhere in the program, so new loop variables and scratch
/// buffers do not collide.
pub(crate) fn taken_names(p: &Program) -> BTreeSet<String> {
    let mut t = bound_vars(&p.body);
    t.extend(p.buffers.iter().map(|b| b.name.clone()));
    t.extend(p.axes.iter().map(|a| a.name.clone()));
    t.extend(p.params.iter().cloned());
    walk_stmt(&p.body, &mut |s| {
        if let Stmt::Alloc { buffer, .. } = s {
            t.insert(buffer.clone());
        }
    });
    t
}

pub(crate) fn fresh(base: &str, taken: &mut BTreeSet<String>) -> String {
    let n = crate::ir::visit::fresh_name(base, taken);
    taken.insert(n.clone());
    n
}

struct Locator<'a> {
    r: &'a LoopRef,
    counter: usize,
    block_seen: bool,
    found: BTreeMap<usize, Loop>,
}

impl Locator<'_> {
    fn go(&mut self, s: &Stmt, stack: &mut Vec<(usize, Loop)>, inside: bool) {
        match s {
            Stmt::Loop(l) => {
                let id = self.counter;
                self.counter += 1;
                if inside && l.var == self.r.var {
                    self.found.insert(id, l.clone());
                }
                stack.push((id, l.clone()));
                self.go(&l.body, stack, inside);
                stack.pop();
            }
            Stmt::Block(b) if b.name == self.r.block => {
                self.block_seen = true;
                for (id, l) in stack.iter() {
                    if l.var == self.r.var {
                        self.found.insert(*id, l.clone());
                    }
                }
                for c in children(s) {
                    self.go(c, stack, true);
                }
            }
            _ => {
                for c in children(s) {
                    self.go(c, stack, inside);
                }
            }
        }
    }
}

/// Pre-order index of the loop `r` names, with a copy of it.
pub(crate) fn locate(p: &Program, r: &LoopRef) -> Result<(usize, Loop)> {
    let mut loc = Locator { r, counter: 0, block_seen: false, found: BTreeMap::new() };
    loc.go(&p.body, &mut Vec::new(), false);
    if !loc.block_seen {
        return Err(Error::Lookup(format!("no block `{}`", r.block)));
    }
    match loc.found.len() {
        0 => Err(Error::Lookup(format!("no loop `{}` around or inside block `{}`", r.var, r.block))),
        1 => Ok(loc.found.into_iter().next().unwrap()),
        _ => Err(Error::Schedule(format!("loop reference `{r}` is ambiguous"))),
    }
}

/// Rebuilds `s` with each direct child replaced by `g(child)`, in the order
/// of `children`.
pub(crate) fn try_map_children(s: &Stmt, g: &mut dyn FnMut(&Stmt) -> Result<Stmt>) -> Result<Stmt> {
    Ok(match s {
        Stmt::Seq(v) => Stmt::Seq(v.iter().map(|x| g(x)).collect::<Result<_>>()?),
        Stmt::SpIter(it) => {
            let mut it = it.clone();
            it.body = Box::new(g(&it.body)?);
            Stmt::SpIter(it)
        }
        Stmt::Loop(l) => {
            let mut l2 = l.clone();
            l2.body = Box::new(g(&l.body)?);
            Stmt::Loop(l2)
        }
        Stmt::Block(b) => {
            let mut b2 = b.clone();
            b2.init = match &b.init {
                Some(i) => Some(Box::new(g(i)?)),
                None => None,
            };
            b2.body = Box::new(g(&b.body)?);
            Stmt::Block(b2)
        }
        Stmt::Search(sb) => {
            let mut s2 = sb.clone();
            s2.body = Box::new(g(&sb.body)?);
            Stmt::Search(s2)
        }
        Stmt::If { cond, then, els } => Stmt::If {
            cond: cond.clone(),
            then: Box::new(g(then)?),
            els: match els {
                Some(e) => Some(Box::new(g(e)?)),
                None => None,
            },
        },
        Stmt::Let { var, value, body } => Stmt::Let { var: var.clone(), value: value.clone(), body: Box::new(g(body)?) },
        Stmt::While { cond, body } => Stmt::While { cond: cond.clone(), body: Box::new(g(body)?) },
        Stmt::Alloc { buffer, dtype, size, body } => {
            Stmt::Alloc { buffer: buffer.clone(), dtype: *dtype, size: *size, body: Box::new(g(body)?) }
        }
        leaf => leaf.clone(),
    })
}

fn rewrite_nth(s: &Stmt, id: usize, counter: &mut usize, f: &mut dyn FnMut(&Loop) -> Result<Stmt>) -> Result<Stmt> {
    if let Stmt::Loop(l) = s {
        let me = *counter;
        *counter += 1;
        if me == id {
            return f(l);
        }
    }
    try_map_children(s, &mut |c| rewrite_nth(c, id, counter, f))
}

/// Replaces the loop with pre-order index `id` by `f(loop)`.
pub(crate) fn rewrite_loop(p: &Program, id: usize, f: &mut dyn FnMut(&Loop) -> Result<Stmt>) -> Result<Program> {
    let body = rewrite_nth(&p.body, id, &mut 0, f)?;
    Ok(Program { body, ..p.clone() })
}

/// The loop directly under `s`, looking through single-statement sequences.
fn sole_loop(s: &Stmt) -> std::result::Result<&Loop, String> {
    match s {
        Stmt::Loop(l) => Ok(l),
        Stmt::Seq(v) if v.len() == 1 => sole_loop(&v[0]),
        Stmt::Block(b) => Err(format!("block `{}` lies between the loops", b.name)),
        _ => Err("loops are not perfectly nested".into()),
    }
}

/// The perfectly nested chain of `n` loops starting at `outer`.
fn perfect_chain(outer: &Loop, n: usize) -> Result<Vec<Loop>> {
    let mut chain = vec![outer.clone()];
    while chain.len() < n {
        let next = sole_loop(&chain.last().unwrap().body).map_err(Error::Schedule)?.clone();
        chain.push(next);
    }
    Ok(chain)
}

fn resolve_chain(p: &Program, refs: &[LoopRef]) -> Result<(usize, Vec<Loop>, Vec<usize>)> {
    let mut ids = Vec::new();
    for r in refs {
        let (id, _) = locate(p, r)?;
        if ids.contains(&id) {
            return Err(Error::Schedule(format!("loop `{r}` listed twice")));
        }
        ids.push(id);
    }
    let first = *ids.iter().min().unwrap();
    let (_, outer) = locate_by_id(p, first)?;
    let chain = perfect_chain(&outer, refs.len())?;
    // In a perfect nest, loop k of the chain has pre-order index first + k.
    let order: Vec<usize> = ids.iter().map(|id| id - first).collect();
    if order.iter().any(|&k| k >= refs.len()) {
        return Err(Error::Schedule("loops are not one perfectly nested band".into()));
    }
    Ok((first, chain, order))
}

fn locate_by_id(p: &Program, id: usize) -> Result<(usize, Loop)> {
    let mut n = 0;
    let mut out = None;
    walk_stmt(&p.body, &mut |s| {
        if let Stmt::Loop(l) = s {
            if n == id {
                out = Some(l.clone());
            }
            n += 1;
        }
    });
    out.map(|l| (id, l)).ok_or_else(|| Error::Lookup(format!("no loop #{id}")))
}

fn rebuild_nest(loops: &[Loop], body: Stmt) -> Stmt {
    loops.iter().rev().fold(body, |inner, l| {
        Stmt::Loop(Loop { var: l.var.clone(), extent: l.extent.clone(), annotations: l.annotations.clone(), body: Box::new(inner) })
    })
}

/// `for v < e` becomes `for v_o < ceil(e / f) { for v_i < f { … } }` with a
/// bound guard unless `f` divides `e` exactly.
pub fn split(p: &Program, r: &LoopRef, factor: i64) -> Result<Program> {
    require_stage2(p)?;
    if factor <= 0 {
        return Err(Error::Schedule(format!("split factor must be positive, got {factor}")));
    }
    let (id, _) = locate(p, r)?;
    let mut taken = taken_names(p);
    let out = rewrite_loop(p, id, &mut |l| {
        let vo = fresh(&format!("{}_o", l.var), &mut taken);
        let vi = fresh(&format!("{}_i", l.var), &mut taken);
        let f = Expr::int(factor);
        let joined = Expr::var(&vo).mul(f.clone()).add(Expr::var(&vi));
        let body = subst_stmt(&l.body, &BTreeMap::from([(l.var.clone(), joined.clone())]));
        let extent = simplify_expr(&l.extent);
        let exact = matches!(extent.as_int(), Some(e) if e % factor == 0);
        let outer_ext = simplify_expr(&extent.clone().add(Expr::int(factor - 1)).floordiv(f.clone()));
        let body = if exact { body } else { Stmt::if_(joined.lt(extent), body, None) };
        let inner = Loop { var: vi, extent: f, annotations: Vec::new(), body: Box::new(body) };
        Ok(Stmt::Loop(Loop {
            var: vo,
            extent: outer_ext,
            annotations: l.annotations.clone(),
            body: Box::new(Stmt::Loop(inner)),
        }))
    })?;
    finish(out)
}

/// Permutes a perfectly nested band. `order` lists the loops outermost first
/// as they should appear afterwards.
pub fn reorder(p: &Program, order: &[LoopRef]) -> Result<Program> {
    require_stage2(p)?;
    if order.len() < 2 {
        return Ok(p.clone());
    }
    let (first, chain, perm) = resolve_chain(p, order)?;
    for l in &chain {
        for m in &chain {
            if l.var != m.var && expr_uses_var(&l.extent, &m.var) {
                return Err(Error::Schedule(format!("extent of `{}` depends on `{}`", l.var, m.var)));
            }
        }
    }
    let body = (*chain.last().unwrap().body).clone();
    let loops: Vec<Loop> = perm.iter().map(|&k| chain[k].clone()).collect();
    let out = rewrite_loop(p, first, &mut |_| Ok(rebuild_nest(&loops, body.clone())))?;
    finish(out)
}

/// Merges two perfectly nested loops, outer first, into one loop over
/// their product.
pub fn fuse(p: &Program, outer: &LoopRef, inner: &LoopRef) -> Result<Program> {
    require_stage2(p)?;
    let (first, chain, perm) = resolve_chain(p, &[outer.clone(), inner.clone()])?;
    if perm != [0, 1] {
        return Err(Error::Schedule(format!("`{outer}` is not directly outside `{inner}`")));
    }
    let (o, i) = (&chain[0], &chain[1]);
    if expr_uses_var(&i.extent, &o.var) {
        return Err(Error::Schedule(format!("extent of `{}` depends on `{}`", i.var, o.var)));
    }
    let mut taken = taken_names(p);
    let v = fresh(&format!("{}_{}", o.var, i.var), &mut taken);
    let fv = Expr::var(&v);
    let map = BTreeMap::from([
        (o.var.clone(), fv.clone().floordiv(i.extent.clone())),
        (i.var.clone(), fv.rem(i.extent.clone())),
    ]);
    let body = subst_stmt(&i.body, &map);
    let fused = Loop {
        var: v,
        extent: simplify_expr(&o.extent.clone().mul(i.extent.clone())),
        annotations: Vec::new(),
        body: Box::new(body),
    };
    let out = rewrite_loop(p, first, &mut |_| Ok(Stmt::Loop(fused.clone())))?;
    finish(out)
}

/// Attaches an annotation. `Parallel` is checked: every store in the loop
/// must be a reduction or write an index that is an injective affine
/// function of the loop variable. Unroll and vectorize are hints.
pub fn annotate(p: &Program, r: &LoopRef, a: Annotation) -> Result<Program> {
    require_stage2(p)?;
    let (id, l) = locate(p, r)?;
    match a {
        Annotation::Parallel => check_parallel(p, &l)?,
        Annotation::Unroll(0) | Annotation::Vectorize(0) => {
            return Err(Error::Schedule("unroll and vectorize factors must be positive".into()))
        }
        _ => {}
    }
    let out = rewrite_loop(p, id, &mut |l| {
        let mut l = l.clone();
        l.annotations.retain(|x| std::mem::discriminant(x) != std::mem::discriminant(&a));
        l.annotations.push(a);
        Ok(Stmt::Loop(l))
    })?;
    finish(out)
}

pub fn parallel(p: &Program, r: &LoopRef) -> Result<Program> {
    annotate(p, r, Annotation::Parallel)
}

/// Coefficient of `var` in `e` when `e` is affine in it, following the
/// definitions in `env`. `None` when `var` (or an `opaque` variable) occurs
/// non-linearly.
pub(crate) fn linear_coeff(e: &Expr, var: &str, env: &BTreeMap<String, Expr>, opaque: &BTreeSet<String>) -> Option<i64> {
    let all_zero = |xs: &[&Expr]| xs.iter().all(|x| linear_coeff(x, var, env, opaque) == Some(0));
    match e {
        Expr::Int(_) | Expr::Float(_) => Some(0),
        Expr::Var(v) if v == var => Some(1),
        Expr::Var(v) if opaque.contains(v) => None,
        Expr::Var(v) => match env.get(v) {
            Some(def) => linear_coeff(def, var, env, opaque),
            None => Some(0),
        },
        Expr::Bin(BinOp::Add, a, b) => Some(linear_coeff(a, var, env, opaque)? + linear_coeff(b, var, env, opaque)?),
        Expr::Bin(BinOp::Sub, a, b) => Some(linear_coeff(a, var, env, opaque)? - linear_coeff(b, var, env, opaque)?),
        Expr::Bin(BinOp::Mul, a, b) => {
            let (ca, cb) = (linear_coeff(a, var, env, opaque)?, linear_coeff(b, var, env, opaque)?);
            match (simplify_expr(a).as_int(), simplify_expr(b).as_int()) {
                (Some(k), _) => Some(k * cb),
                (_, Some(k)) => Some(k * ca),
                _ if ca == 0 && cb == 0 => Some(0),
                _ => None,
            }
        }
        Expr::Bin(_, a, b) | Expr::Cmp(_, a, b) => all_zero(&[a, b]).then_some(0),
        Expr::Load(_, idx) => idx.iter().all(|x| linear_coeff(x, var, env, opaque) == Some(0)).then_some(0),
        Expr::Select(c, a, b) => all_zero(&[c, a, b]).then_some(0),
    }
}

fn check_parallel(p: &Program, l: &Loop) -> Result<()> {
    let mut env = BTreeMap::new();
    let mut opaque = BTreeSet::new();
    let mut locals = BTreeSet::new();
    walk_stmt(&l.body, &mut |s| match s {
        Stmt::Block(b) => {
            for bd in &b.bindings {
                env.insert(bd.var.clone(), bd.value.clone());
            }
        }
        Stmt::Let { var, value, .. } => {
            env.insert(var.clone(), value.clone());
        }
        Stmt::Search(sb) => {
            opaque.insert(sb.result.clone());
            opaque.insert(sb.found.clone());
        }
        Stmt::Alloc { buffer, .. } => {
            locals.insert(buffer.clone());
        }
        _ => {}
    });
    let mut problem = None;
    walk_stmt(&l.body, &mut |s| {
        let Stmt::Store { buffer, indices, reduce, .. } = s else { return };
        if problem.is_some() || locals.contains(buffer) {
            return;
        }
        if p.buffer(buffer).is_none() {
            problem = Some(format!("store to scratch `{buffer}` allocated outside the loop"));
        } else if !*reduce
            && !indices.iter().any(|i| matches!(linear_coeff(i, &l.var, &env, &opaque), Some(c) if c != 0))
        {
            problem = Some(format!("store to `{buffer}` is not indexed injectively by `{}`", l.var));
        }
    });
    match problem {
        Some(m) => Err(Error::Schedule(format!("cannot parallelize `{}`: {m}", l.var))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests;
