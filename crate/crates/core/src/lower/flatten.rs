//! Sparse buffer lowering: multi-dimensional position-space accesses become
//! one-dimensional offsets, and binary searches become while-loops.

use crate::axes::{find_axis, total_entries, Axis, AxisKind};
use crate::error::{Error, Result};
use crate::ir::simplify::{simplify_expr, simplify_stmt};
use crate::ir::visit::{map_expr, map_stmts};
use crate::ir::{BinOp, BufferDecl, CmpOp, Expr, Layout, Program, SearchBlock, SearchMode, Stage, Stmt};
use crate::storage::ValueDType;

use super::regions::analyze_regions;

fn axis_offset(axes: &[&Axis], names: &[String], d: usize, pos: &[Expr], cache: &mut Vec<Option<Expr>>) -> Result<Expr> {
    if let Some(e) = &cache[d] {
        return Ok(e.clone());
    }
    let a = axes[d];
    let off = match &a.parent {
        None => pos[d].clone(),
        Some(parent) => {
            let pd = names[..d].iter().position(|n| n == parent).ok_or_else(|| {
                Error::Lowering(format!("axis `{}` needs its parent `{parent}` earlier in the buffer", a.name))
            })?;
            let po = axis_offset(axes, names, pd, pos, cache)?;
            match a.kind {
                AxisKind::SparseFixed => po.mul(Expr::int(a.nnz_cols.unwrap_or(0) as i64)).add(pos[d].clone()),
                _ => Expr::load(a.indptr.as_deref().unwrap_or_default(), vec![po]).add(pos[d].clone()),
            }
        }
    };
    cache[d] = Some(off.clone());
    Ok(off)
}

fn is_leaf(axes: &[&Axis], d: usize) -> bool {
    !axes[d + 1..].iter().any(|x| x.parent.as_deref() == Some(axes[d].name.as_str()))
}

/// Number of flat slots of a buffer.
pub fn flat_size(p: &Program, decl: &BufferDecl) -> Result<usize> {
    match &decl.layout {
        Layout::Dense(shape) => Ok(shape.iter().product()),
        Layout::Sparse(names) => {
            let axes: Vec<&Axis> = names.iter().map(|n| find_axis(&p.axes, n)).collect::<Result<_>>()?;
            let mut size = 1usize;
            for d in 0..axes.len() {
                if is_leaf(&axes, d) {
                    size *= total_entries(&p.axes, axes[d])?;
                }
            }
            Ok(size)
        }
    }
}

/// Flat offset of a position-space access, built from axis metadata and the
/// aux arrays.
pub fn flat_index(p: &Program, decl: &BufferDecl, pos: &[Expr]) -> Result<Expr> {
    if pos.len() != decl.ndim() {
        return Err(Error::Lowering(format!(
            "buffer `{}` accessed with {} indices, expects {}",
            decl.name,
            pos.len(),
            decl.ndim()
        )));
    }
    let e = match &decl.layout {
        Layout::Dense(shape) => {
            let mut acc = Expr::int(0);
            for (d, x) in pos.iter().enumerate() {
                acc = acc.mul(Expr::int(shape[d] as i64)).add(x.clone());
            }
            acc
        }
        Layout::Sparse(names) => {
            let axes: Vec<&Axis> = names.iter().map(|n| find_axis(&p.axes, n)).collect::<Result<_>>()?;
            let mut cache = vec![None; axes.len()];
            let mut acc = Expr::int(0);
            for d in 0..axes.len() {
                if !is_leaf(&axes, d) {
                    continue;
                }
                let total = total_entries(&p.axes, axes[d])? as i64;
                let off = axis_offset(&axes, names, d, pos, &mut cache)?;
                acc = acc.mul(Expr::int(total)).add(off);
            }
            acc
        }
    };
    Ok(simplify_expr(&e))
}

/// While-loop form of a binary search over `array[lo, hi)`.
fn expand_search(sb: &SearchBlock) -> Stmt {
    let n = &sb.name;
    let (lo, hi, key, m, s) = (
        Expr::var(&format!("{n}_lo")),
        Expr::var(&format!("{n}_hi")),
        Expr::var(&format!("{n}_key")),
        Expr::var(&format!("{n}_mid")),
        format!("{n}_s"),
    );
    let s0 = Expr::load(&s, vec![Expr::int(0)]);
    let s1 = Expr::load(&s, vec![Expr::int(1)]);
    let probe = Expr::load(&sb.array, vec![m.clone()]);
    let go_right = match sb.mode {
        SearchMode::Find => probe.lt(key.clone()),
        SearchMode::Upper => Expr::cmp(CmpOp::Le, probe, key.clone()),
    };
    let step = Stmt::let_(
        &format!("{n}_mid"),
        s0.clone().add(s1.clone()).floordiv(Expr::int(2)),
        Stmt::if_(
            go_right,
            Stmt::store(&s, vec![Expr::int(0)], m.clone().add(Expr::int(1)), false),
            Some(Stmt::store(&s, vec![Expr::int(1)], m, false)),
        ),
    );
    let (result, found) = match sb.mode {
        SearchMode::Find => (
            s0.clone().sub(lo.clone()),
            Expr::select(
                s0.clone().lt(hi.clone()),
                Expr::load(&sb.array, vec![s0.clone()]).eq(key.clone()),
                Expr::int(0),
            ),
        ),
        SearchMode::Upper => (
            Expr::bin(BinOp::Max, s0.clone().sub(Expr::int(1)).sub(lo.clone()), Expr::int(0)),
            Expr::cmp(CmpOp::Gt, s0.clone(), lo.clone()),
        ),
    };
    let inner = Stmt::seq(vec![
        Stmt::store(&s, vec![Expr::int(0)], lo, false),
        Stmt::store(&s, vec![Expr::int(1)], hi, false),
        Stmt::While { cond: s0.lt(s1), body: Box::new(step) },
        Stmt::let_(&sb.result, result, Stmt::let_(&sb.found, found, (*sb.body).clone())),
    ]);
    let alloc = Stmt::Alloc { buffer: s, dtype: ValueDType::I32, size: 2, body: Box::new(inner) };
    Stmt::let_(
        &format!("{n}_lo"),
        sb.lo.clone(),
        Stmt::let_(&format!("{n}_hi"), sb.hi.clone(), Stmt::let_(&format!("{n}_key"), sb.key.clone(), alloc)),
    )
}

/// Stage II → III.
pub fn lower_sparse_buffers(p: &Program) -> Result<Program> {
    if p.stage != Stage::II {
        return Err(Error::Stage(format!("wrong stage: expected II, got {}", p.stage)));
    }
    let mut buffers = Vec::new();
    for b in &p.buffers {
        let size = flat_size(p, b)?;
        buffers.push(BufferDecl { layout: Layout::Dense(vec![size]), ..b.clone() });
    }
    let mut err: Option<Error> = None;
    let flat = |buffer: &str, idx: Vec<Expr>, err: &mut Option<Error>| -> Vec<Expr> {
        let Some(decl) = p.buffer(buffer) else {
            return idx;
        };
        match flat_index(p, decl, &idx) {
            Ok(e) => vec![e],
            Err(e) => {
                err.get_or_insert(e);
                idx
            }
        }
    };
    let fix_expr = |e: &Expr, err: &mut Option<Error>| {
        map_expr(e, &mut |x| match x {
            Expr::Load(b, idx) => {
                let idx = flat(&b, idx, err);
                Expr::Load(b, idx)
            }
            x => x,
        })
    };
    let body = crate::ir::visit::map_stmt_exprs(&p.body, &mut |e| fix_expr(e, &mut err));
    let body = map_stmts(&body, &mut |s| match s {
        Stmt::Store { buffer, indices, value, reduce } => {
            let indices = match p.buffer(&buffer) {
                Some(decl) => match flat_index(p, decl, &indices) {
                    Ok(e) => vec![e],
                    Err(e) => {
                        err.get_or_insert(e);
                        indices
                    }
                },
                None => indices,
            };
            Stmt::Store { buffer, indices, value, reduce }
        }
        Stmt::Block(mut b) => {
            b.reads.clear();
            b.writes.clear();
            Stmt::Block(b)
        }
        Stmt::Search(sb) => expand_search(&sb),
        s => s,
    });
    if let Some(e) = err {
        return Err(e);
    }
    let out = Program {
        stage: Stage::III,
        axes: Vec::new(),
        buffers,
        body: simplify_stmt(&body),
        ..p.clone()
    };
    Ok(analyze_regions(&out))
}
