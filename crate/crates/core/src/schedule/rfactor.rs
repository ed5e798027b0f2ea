//! Two-stage sum reduction through a partial-sum scratch buffer.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ir::simplify::simplify_expr;
use crate::ir::visit::{bound_vars, expr_loads, expr_vars, map_stmts, stmt_exprs, subst_expr, subst_stmt, walk_stmt};
use crate::ir::{Expr, Loop, Program, Stmt};

use super::{finish, fresh, locate, require_stage2, rewrite_loop, taken_names, LoopRef};

/// The single reduction target of a loop body: buffer and index, with
/// block bindings inside the loop substituted away.
fn reduction_target(l: &Loop) -> Result<(String, Vec<Expr>, Vec<Expr>)> {
    let err = |m: String| Error::Schedule(format!("rfactor `{}`: {m}", l.var));
    let mut env = BTreeMap::new();
    let mut locals = BTreeSet::new();
    walk_stmt(&l.body, &mut |s| match s {
        Stmt::Block(b) => {
            for bd in &b.bindings {
                env.insert(bd.var.clone(), bd.value.clone());
            }
        }
        Stmt::Alloc { buffer, .. } => {
            locals.insert(buffer.clone());
        }
        _ => {}
    });
    let inner = bound_vars(&l.body);
    let mut target: Option<(String, Vec<Expr>, Vec<Expr>)> = None;
    let mut problem = None;
    walk_stmt(&l.body, &mut |s| {
        if problem.is_some() {
            return;
        }
        match s {
            Stmt::Store { buffer, .. } if locals.contains(buffer) => {}
            Stmt::Store { buffer, indices, reduce, .. } => {
                if !*reduce {
                    problem = Some(format!("store to `{buffer}` is not a reduction"));
                    return;
                }
                let mut resolved: Vec<Expr> = indices.clone();
                for _ in 0..=env.len() {
                    resolved = resolved.iter().map(|e| subst_expr(e, &env)).collect();
                }
                let resolved: Vec<Expr> = resolved.iter().map(simplify_expr).collect();
                if resolved.iter().any(|e| expr_vars(e).iter().any(|v| inner.contains(v) || v == &l.var)) {
                    problem = Some(format!("index of `{buffer}` varies with the reduction"));
                    return;
                }
                match &target {
                    None => target = Some((buffer.clone(), indices.clone(), resolved)),
                    Some((b, _, r)) if b == buffer && *r == resolved => {}
                    Some(_) => problem = Some("more than one reduction target".into()),
                }
            }
            Stmt::If { then, .. } if matches!(**then, Stmt::Store { .. }) => {
                problem = Some("guarded stores are not supported".into());
            }
            _ => {}
        }
    });
    if let Some(m) = problem {
        return Err(err(m));
    }
    let target = target.ok_or_else(|| err("loop body stores nothing".into()))?;
    let mut reads_target = false;
    walk_stmt(&l.body, &mut |s| {
        for e in stmt_exprs(s) {
            reads_target |= expr_loads(e).iter().any(|(b, _)| **b == target.0);
        }
    });
    if reads_target {
        return Err(err(format!("body reads `{}`", target.0)));
    }
    Ok(target)
}

/// Splits the sum over loop `r` into groups of `factor` consecutive
/// iterations. Stage one accumulates each group into its own slot of a
/// zeroed partial buffer; stage two adds the partials to the target.
pub fn rfactor(p: &Program, r: &LoopRef, factor: i64) -> Result<Program> {
    require_stage2(p)?;
    if factor <= 0 {
        return Err(Error::Schedule(format!("rfactor factor must be positive, got {factor}")));
    }
    let (id, l) = locate(p, r)?;
    let extent = simplify_expr(&l.extent)
        .as_int()
        .ok_or_else(|| Error::Schedule(format!("rfactor `{}`: extent is not a constant", l.var)))?;
    let (buffer, _, resolved) = reduction_target(&l)?;
    let dtype = p
        .buffer(&buffer)
        .ok_or_else(|| Error::Schedule(format!("rfactor `{}`: `{buffer}` is scratch", l.var)))?
        .dtype;
    let groups = ((extent + factor - 1) / factor).max(1);
    let mut taken = taken_names(p);
    let g = fresh(&format!("{}_g", l.var), &mut taken);
    let e = fresh(&format!("{}_e", l.var), &mut taken);
    let g2 = fresh(&format!("{}_s", l.var), &mut taken);
    let rf = fresh(&format!("{buffer}_rf"), &mut taken);
    let out = rewrite_loop(p, id, &mut |l| {
        let joined = Expr::var(&g).mul(Expr::int(factor)).add(Expr::var(&e));
        let body = subst_stmt(&l.body, &BTreeMap::from([(l.var.clone(), joined.clone())]));
        let body = map_stmts(&body, &mut |s| match s {
            Stmt::Store { buffer: b, value, reduce: true, .. } if b == buffer => {
                Stmt::store(&rf, vec![Expr::var(&g)], value, true)
            }
            s => s,
        });
        let body = if extent % factor == 0 { body } else { Stmt::if_(joined.lt(Expr::int(extent)), body, None) };
        let stage1 = Stmt::for_(&g, Expr::int(groups), Stmt::for_(&e, Expr::int(factor), body));
        let stage2 = Stmt::for_(
            &g2,
            Expr::int(groups),
            Stmt::store(&buffer, resolved.clone(), Expr::load(&rf, vec![Expr::var(&g2)]), true),
        );
        Ok(Stmt::Alloc {
            buffer: rf.clone(),
            dtype,
            size: groups as usize,
            body: Box::new(Stmt::seq(vec![stage1, stage2])),
        })
    })?;
    finish(out)
}
