//! Traversal and rewriting helpers shared by the passes.

use std::collections::{BTreeMap, BTreeSet};

use super::{Expr, Stmt};

/// Direct children of a statement, in order.
pub fn children(s: &Stmt) -> Vec<&Stmt> {
    match s {
        Stmt::Seq(v) => v.iter().collect(),
        Stmt::SpIter(it) => vec![&it.body],
        Stmt::Loop(l) => vec![&l.body],
        Stmt::Block(b) => {
            let mut v: Vec<&Stmt> = b.init.iter().map(|s| s.as_ref()).collect();
            v.push(&b.body);
            v
        }
        Stmt::Search(s) => vec![&s.body],
        Stmt::If { then, els, .. } => {
            let mut v = vec![then.as_ref()];
            if let Some(e) = els {
                v.push(e);
            }
            v
        }
        Stmt::Let { body, .. } | Stmt::While { body, .. } | Stmt::Alloc { body, .. } => vec![body],
        Stmt::Store { .. } | Stmt::Assert { .. } => vec![],
    }
}

/// Pre-order walk over statements.
pub fn walk_stmt<'a>(s: &'a Stmt, f: &mut impl FnMut(&'a Stmt)) {
    f(s);
    for c in children(s) {
        walk_stmt(c, f);
    }
}

/// Pre-order walk over expressions.
pub fn walk_expr<'a>(e: &'a Expr, f: &mut impl FnMut(&'a Expr)) {
    f(e);
    match e {
        Expr::Bin(_, a, b) | Expr::Cmp(_, a, b) => {
            walk_expr(a, f);
            walk_expr(b, f);
        }
        Expr::Load(_, idx) => idx.iter().for_each(|i| walk_expr(i, f)),
        Expr::Select(c, a, b) => {
            walk_expr(c, f);
            walk_expr(a, f);
            walk_expr(b, f);
        }
        Expr::Int(_) | Expr::Float(_) | Expr::Var(_) => {}
    }
}

/// Expressions held directly by a statement (not by its children).
pub fn stmt_exprs(s: &Stmt) -> Vec<&Expr> {
    match s {
        Stmt::Store { indices, value, .. } => indices.iter().chain(std::iter::once(value)).collect(),
        Stmt::Loop(l) => vec![&l.extent],
        Stmt::Block(b) => {
            let mut v: Vec<&Expr> = b.bindings.iter().map(|b| &b.value).collect();
            for r in b.reads.iter().chain(&b.writes) {
                for (lo, ext) in &r.ranges {
                    v.push(lo);
                    v.push(ext);
                }
            }
            v
        }
        Stmt::Search(s) => vec![&s.lo, &s.hi, &s.key],
        Stmt::If { cond, .. } | Stmt::While { cond, .. } | Stmt::Assert { cond, .. } => vec![cond],
        Stmt::Let { value, .. } => vec![value],
        Stmt::Seq(_) | Stmt::SpIter(_) | Stmt::Alloc { .. } => vec![],
    }
}

/// Rebuilds an expression bottom-up; `f` sees every node after its children
/// were rewritten.
pub fn map_expr(e: &Expr, f: &mut impl FnMut(Expr) -> Expr) -> Expr {
    let rebuilt = match e {
        Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(map_expr(a, f)), Box::new(map_expr(b, f))),
        Expr::Cmp(op, a, b) => Expr::Cmp(*op, Box::new(map_expr(a, f)), Box::new(map_expr(b, f))),
        Expr::Load(n, idx) => Expr::Load(n.clone(), idx.iter().map(|i| map_expr(i, f)).collect()),
        Expr::Select(c, a, b) => Expr::Select(
            Box::new(map_expr(c, f)),
            Box::new(map_expr(a, f)),
            Box::new(map_expr(b, f)),
        ),
        leaf => leaf.clone(),
    };
    f(rebuilt)
}

/// Applies `f` to every expression held anywhere inside a statement.
pub fn map_stmt_exprs(s: &Stmt, f: &mut impl FnMut(&Expr) -> Expr) -> Stmt {
    map_stmt_exprs_dyn(s, f)
}

fn map_stmt_exprs_dyn(s: &Stmt, f: &mut dyn FnMut(&Expr) -> Expr) -> Stmt {
    let m = |x: &Stmt, f: &mut dyn FnMut(&Expr) -> Expr| Box::new(map_stmt_exprs_dyn(x, f));
    match s {
        Stmt::Store { buffer, indices, value, reduce } => Stmt::Store {
            buffer: buffer.clone(),
            indices: indices.iter().map(|i| f(i)).collect(),
            value: f(value),
            reduce: *reduce,
        },
        Stmt::Seq(v) => Stmt::Seq(v.iter().map(|x| map_stmt_exprs_dyn(x, f)).collect()),
        Stmt::SpIter(it) => {
            let mut it = it.clone();
            it.body = m(&it.body, f);
            Stmt::SpIter(it)
        }
        Stmt::Loop(l) => {
            let mut l2 = l.clone();
            l2.extent = f(&l.extent);
            l2.body = m(&l.body, f);
            Stmt::Loop(l2)
        }
        Stmt::Block(b) => {
            let mut b2 = b.clone();
            for bd in &mut b2.bindings {
                bd.value = f(&bd.value);
            }
            for r in b2.reads.iter_mut().chain(b2.writes.iter_mut()) {
                for (lo, ext) in &mut r.ranges {
                    *lo = f(lo);
                    *ext = f(ext);
                }
            }
            b2.init = b.init.as_ref().map(|i| m(i, f));
            b2.body = m(&b.body, f);
            Stmt::Block(b2)
        }
        Stmt::Search(sb) => {
            let mut s2 = sb.clone();
            s2.lo = f(&sb.lo);
            s2.hi = f(&sb.hi);
            s2.key = f(&sb.key);
            s2.body = m(&sb.body, f);
            Stmt::Search(s2)
        }
        Stmt::If { cond, then, els } => Stmt::If {
            cond: f(cond),
            then: m(then, f),
            els: els.as_ref().map(|e| m(e, f)),
        },
        Stmt::Let { var, value, body } => {
            Stmt::Let { var: var.clone(), value: f(value), body: m(body, f) }
        }
        Stmt::While { cond, body } => Stmt::While { cond: f(cond), body: m(body, f) },
        Stmt::Alloc { buffer, dtype, size, body } => Stmt::Alloc {
            buffer: buffer.clone(),
            dtype: *dtype,
            size: *size,
            body: m(body, f),
        },
        Stmt::Assert { cond, msg } => Stmt::Assert { cond: f(cond), msg: msg.clone() },
    }
}

/// Replaces variables by expressions. Binders are assumed unique, so no
/// capture handling is done.
pub fn subst_expr(e: &Expr, map: &BTreeMap<String, Expr>) -> Expr {
    if map.is_empty() {
        return e.clone();
    }
    map_expr(e, &mut |x| match &x {
        Expr::Var(v) => map.get(v).cloned().unwrap_or(x),
        _ => x,
    })
}

pub fn subst_stmt(s: &Stmt, map: &BTreeMap<String, Expr>) -> Stmt {
    map_stmt_exprs(s, &mut |e| subst_expr(e, map))
}

/// Renames buffers in loads and stores.
pub fn rename_buffers(s: &Stmt, map: &BTreeMap<String, String>) -> Stmt {
    let renamed = map_stmt_exprs(s, &mut |e| {
        map_expr(e, &mut |x| match x {
            Expr::Load(n, idx) => Expr::Load(map.get(&n).cloned().unwrap_or(n), idx),
            x => x,
        })
    });
    rename_store_targets(&renamed, map)
}

fn rename_store_targets(s: &Stmt, map: &BTreeMap<String, String>) -> Stmt {
    map_stmts(s, &mut |x| match x {
        Stmt::Store { buffer, indices, value, reduce } => Stmt::Store {
            buffer: map.get(&buffer).cloned().unwrap_or(buffer),
            indices,
            value,
            reduce,
        },
        x => x,
    })
}

/// Rebuilds a statement bottom-up, applying `f` to every node after its
/// children.
pub fn map_stmts(s: &Stmt, f: &mut impl FnMut(Stmt) -> Stmt) -> Stmt {
    map_stmts_dyn(s, f)
}

fn map_stmts_dyn(s: &Stmt, f: &mut dyn FnMut(Stmt) -> Stmt) -> Stmt {
    let rebuilt = match s {
        Stmt::Seq(v) => Stmt::Seq(v.iter().map(|x| map_stmts_dyn(x, f)).collect()),
        Stmt::SpIter(it) => {
            let mut it = it.clone();
            it.body = Box::new(map_stmts_dyn(&it.body, f));
            Stmt::SpIter(it)
        }
        Stmt::Loop(l) => {
            let mut l2 = l.clone();
            l2.body = Box::new(map_stmts_dyn(&l.body, f));
            Stmt::Loop(l2)
        }
        Stmt::Block(b) => {
            let mut b2 = b.clone();
            b2.init = b.init.as_ref().map(|i| Box::new(map_stmts_dyn(i, f)));
            b2.body = Box::new(map_stmts_dyn(&b.body, f));
            Stmt::Block(b2)
        }
        Stmt::Search(sb) => {
            let mut s2 = sb.clone();
            s2.body = Box::new(map_stmts_dyn(&sb.body, f));
            Stmt::Search(s2)
        }
        Stmt::If { cond, then, els } => Stmt::If {
            cond: cond.clone(),
            then: Box::new(map_stmts_dyn(then, f)),
            els: els.as_ref().map(|e| Box::new(map_stmts_dyn(e, f))),
        },
        Stmt::Let { var, value, body } => Stmt::Let {
            var: var.clone(),
            value: value.clone(),
            body: Box::new(map_stmts_dyn(body, f)),
        },
        Stmt::While { cond, body } => {
            Stmt::While { cond: cond.clone(), body: Box::new(map_stmts_dyn(body, f)) }
        }
        Stmt::Alloc { buffer, dtype, size, body } => Stmt::Alloc {
            buffer: buffer.clone(),
            dtype: *dtype,
            size: *size,
            body: Box::new(map_stmts_dyn(body, f)),
        },
        leaf => leaf.clone(),
    };
    f(rebuilt)
}

pub fn expr_vars(e: &Expr) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    walk_expr(e, &mut |x| {
        if let Expr::Var(v) = x {
            out.insert(v.clone());
        }
    });
    out
}

pub fn expr_uses_var(e: &Expr, var: &str) -> bool {
    let mut hit = false;
    walk_expr(e, &mut |x| {
        if let Expr::Var(v) = x {
            hit |= v == var;
        }
    });
    hit
}

pub fn expr_has_load(e: &Expr) -> bool {
    let mut hit = false;
    walk_expr(e, &mut |x| hit |= matches!(x, Expr::Load(..)));
    hit
}

/// Buffers loaded anywhere in an expression.
pub fn expr_loads(e: &Expr) -> Vec<(&String, &Vec<Expr>)> {
    let mut out = Vec::new();
    walk_expr(e, &mut |x| {
        if let Expr::Load(n, idx) = x {
            out.push((n, idx));
        }
    });
    out
}

/// Every variable name bound anywhere in a statement.
pub fn bound_vars(s: &Stmt) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    walk_stmt(s, &mut |x| match x {
        Stmt::SpIter(it) => {
            for i in &it.iterators {
                out.extend(i.vars.iter().cloned());
            }
        }
        Stmt::Loop(l) => {
            out.insert(l.var.clone());
        }
        Stmt::Block(b) => out.extend(b.bindings.iter().map(|b| b.var.clone())),
        Stmt::Search(sb) => {
            out.insert(sb.result.clone());
            out.insert(sb.found.clone());
        }
        Stmt::Let { var, .. } => {
            out.insert(var.clone());
        }
        _ => {}
    });
    out
}

/// Buffers stored to anywhere in a statement, with the reduce flags seen.
pub fn stored_buffers(s: &Stmt) -> BTreeMap<String, (bool, bool)> {
    let mut out: BTreeMap<String, (bool, bool)> = BTreeMap::new();
    walk_stmt(s, &mut |x| {
        if let Stmt::Store { buffer, reduce, .. } = x {
            let e = out.entry(buffer.clone()).or_default();
            if *reduce {
                e.0 = true;
            } else {
                e.1 = true;
            }
        }
    });
    out
}

/// Every buffer loaded anywhere in a statement.
pub fn loaded_buffers(s: &Stmt) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    walk_stmt(s, &mut |x| {
        for e in stmt_exprs(x) {
            for (n, _) in expr_loads(e) {
                out.insert(n.clone());
            }
        }
    });
    out
}

/// A name not in `taken`, derived from `base`.
pub fn fresh_name(base: &str, taken: &BTreeSet<String>) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (1..).map(|i| format!("{base}{i}")).find(|n| !taken.contains(n)).unwrap()
}
