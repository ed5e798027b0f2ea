//! Coordinate translation: rewrites coordinate-space buffer accesses inside
//! generated loop nests into position space.
//!
//! Per buffer dimension the position is found in one of three ways. An index
//! that is the iterator variable of the same axis, with its parent dimension
//! matched the same way, reuses the iterator's position directly. A dense
//! dimension's position is the coordinate itself. Otherwise a binary search
//! over the dimension's indices segment finds it.

use std::collections::{BTreeMap, BTreeSet};

use crate::axes::{Axis, AxisKind};
use crate::error::{Error, Result};
use crate::ir::simplify::{simplify_expr, simplify_stmt};
use crate::ir::visit::{bound_vars, fresh_name, map_stmts};
use crate::ir::{print_expr, CmpOp, Expr, Layout, Program, SearchBlock, SearchMode, Stage, Stmt};

use super::loops::{decode_coords, iter_coord, iter_offset, IterAxis, COORDS_ATTR};

struct Tr<'a> {
    p: &'a Program,
    axes: Vec<IterAxis>,
    coords: BTreeMap<String, usize>,
    searches: Vec<SearchBlock>,
    memo: BTreeMap<String, (String, String)>,
    taken: &'a mut BTreeSet<String>,
    block: String,
}

fn zero_of(p: &Program, buffer: &str) -> Expr {
    match p.buffer(buffer) {
        Some(d) if d.dtype.is_float() => Expr::Float(0.0),
        _ => Expr::int(0),
    }
}

fn conj(a: Expr, b: Expr) -> Expr {
    if a.as_int() == Some(1) {
        b
    } else {
        a.and(b)
    }
}

fn in_range(e: &Expr, ext: &Expr) -> Expr {
    match (e.as_int(), ext.as_int()) {
        (Some(v), Some(n)) if v >= 0 && v < n => Expr::int(1),
        _ => Expr::cmp(CmpOp::Le, Expr::int(0), e.clone()).and(e.clone().lt(ext.clone())),
    }
}

impl Tr<'_> {
    fn pos(&self, i: usize) -> Expr {
        Expr::var(&self.axes[i].pos_var)
    }

    fn coord(&self, i: usize) -> Result<Expr> {
        iter_coord(&self.axes, i, &|k| self.pos(k))
    }

    fn expr(&mut self, e: &Expr) -> Result<Expr> {
        Ok(match e {
            Expr::Var(v) => match self.coords.get(v) {
                Some(&i) => self.coord(i)?,
                None => e.clone(),
            },
            Expr::Int(_) | Expr::Float(_) => e.clone(),
            Expr::Bin(op, a, b) => Expr::bin(*op, self.expr(a)?, self.expr(b)?),
            Expr::Cmp(op, a, b) => Expr::cmp(*op, self.expr(a)?, self.expr(b)?),
            Expr::Select(c, a, b) => Expr::select(self.expr(c)?, self.expr(a)?, self.expr(b)?),
            Expr::Load(buffer, idx) => {
                let (pos, valid) = self.access(buffer, idx)?;
                let load = Expr::load(buffer, pos);
                if valid.as_int() == Some(1) {
                    load
                } else {
                    Expr::select(valid, load, zero_of(self.p, buffer))
                }
            }
        })
    }

    fn search(&mut self, array: &str, lo: Expr, hi: Expr, key: Expr) -> (String, String) {
        let memo_key = format!("{array}|{}|{}|{}", print_expr(&lo), print_expr(&hi), print_expr(&key));
        if let Some(r) = self.memo.get(&memo_key) {
            return r.clone();
        }
        let name = fresh_name(&format!("{}_find", self.block), self.taken);
        let result = fresh_name(&format!("{name}_p"), self.taken);
        let found = fresh_name(&format!("{name}_ok"), self.taken);
        self.taken.extend([name.clone(), result.clone(), found.clone()]);
        self.searches.push(SearchBlock {
            name,
            mode: SearchMode::Find,
            array: array.to_string(),
            lo,
            hi,
            key,
            result: result.clone(),
            found: found.clone(),
            body: Box::new(Stmt::empty()),
        });
        self.memo.insert(memo_key, (result.clone(), found.clone()));
        (result, found)
    }

    fn direct_axis(&self, raw: &Expr, axis: &Axis) -> Option<usize> {
        let v = raw.as_var()?;
        let &i = self.coords.get(v)?;
        (self.axes[i].axis.name == axis.name).then_some(i)
    }

    /// Position indices and validity condition for an access.
    fn access(&mut self, buffer: &str, raw: &[Expr]) -> Result<(Vec<Expr>, Expr)> {
        let decl = self
            .p
            .buffer(buffer)
            .cloned()
            .ok_or_else(|| Error::Lowering(format!("unknown buffer `{buffer}`")))?;
        let mut valid = Expr::int(1);
        match &decl.layout {
            Layout::Dense(shape) => {
                let mut pos = Vec::new();
                for (d, r) in raw.iter().enumerate() {
                    let e = self.expr(r)?;
                    let covered = r
                        .as_var()
                        .and_then(|v| self.coords.get(v))
                        .is_some_and(|&i| self.axes[i].axis.length <= shape[d]);
                    if !covered && !decl.is_aux() {
                        valid = conj(valid, in_range(&e, &Expr::int(shape[d] as i64)));
                    }
                    pos.push(e);
                }
                Ok((pos, simplify_expr(&valid)))
            }
            Layout::Sparse(names) => {
                let mut pos: Vec<Expr> = Vec::new();
                let mut offs: Vec<Expr> = Vec::new();
                let mut direct: Vec<bool> = Vec::new();
                for (d, name) in names.iter().enumerate() {
                    let axis = self.p.axis(name).cloned().ok_or_else(|| {
                        Error::Lowering(format!("unknown axis `{name}` in buffer `{buffer}`"))
                    })?;
                    let pd = match &axis.parent {
                        None => None,
                        Some(parent) => Some(names[..d].iter().position(|n| n == parent).ok_or_else(
                            || {
                                Error::Lowering(format!(
                                    "buffer `{buffer}`: axis `{name}` needs its parent `{parent}` among earlier dimensions"
                                ))
                            },
                        )?),
                    };
                    let parent_direct = pd.map_or(true, |k| direct[k]);
                    if let (true, Some(i)) = (parent_direct, self.direct_axis(&raw[d], &axis)) {
                        pos.push(self.pos(i));
                        offs.push(iter_offset(&self.axes, i, &|k| self.pos(k))?);
                        direct.push(true);
                        continue;
                    }
                    direct.push(false);
                    let e = self.expr(&raw[d])?;
                    let off_par = pd.map(|k| offs[k].clone());
                    let p = if axis.kind.is_dense() {
                        let ext = match (&axis.kind, &off_par) {
                            (AxisKind::DenseVariable, Some(o)) => {
                                let ptr = axis.indptr.as_deref().unwrap_or_default();
                                Expr::load(ptr, vec![o.clone().add(Expr::int(1))])
                                    .sub(Expr::load(ptr, vec![o.clone()]))
                            }
                            _ => Expr::int(axis.length as i64),
                        };
                        valid = conj(valid, in_range(&e, &ext));
                        e
                    } else {
                        let (lo, hi) = match (&axis.kind, &off_par) {
                            (AxisKind::SparseFixed, None) => {
                                (Expr::int(0), Expr::int(axis.nnz_cols.unwrap_or(0) as i64))
                            }
                            (AxisKind::SparseFixed, Some(o)) => {
                                let w = axis.nnz_cols.unwrap_or(0) as i64;
                                let lo = o.clone().mul(Expr::int(w));
                                (lo.clone(), lo.add(Expr::int(w)))
                            }
                            (_, Some(o)) => {
                                let ptr = axis.indptr.as_deref().unwrap_or_default();
                                (
                                    Expr::load(ptr, vec![o.clone()]),
                                    Expr::load(ptr, vec![o.clone().add(Expr::int(1))]),
                                )
                            }
                            (_, None) => {
                                return Err(Error::Lowering(format!(
                                    "variable axis `{name}` has no parent"
                                )))
                            }
                        };
                        let (lo, hi) = if valid.as_int() == Some(1) {
                            (lo, hi)
                        } else {
                            (
                                Expr::select(valid.clone(), lo, Expr::int(0)),
                                Expr::select(valid.clone(), hi, Expr::int(0)),
                            )
                        };
                        let idx = axis.indices.clone().unwrap_or_default();
                        let (lo, hi) = (simplify_expr(&lo), simplify_expr(&hi));
                        let (r, f) = self.search(&idx, lo, hi, simplify_expr(&e));
                        valid = conj(valid, Expr::var(&f));
                        Expr::var(&r)
                    };
                    let off = match (&axis.kind, off_par) {
                        (_, None) => p.clone(),
                        (AxisKind::SparseFixed, Some(o)) => {
                            o.mul(Expr::int(axis.nnz_cols.unwrap_or(0) as i64)).add(p.clone())
                        }
                        (_, Some(o)) => {
                            Expr::load(axis.indptr.as_deref().unwrap_or_default(), vec![o]).add(p.clone())
                        }
                    };
                    pos.push(p);
                    offs.push(off);
                }
                Ok((pos, simplify_expr(&valid)))
            }
        }
    }

    fn wrap(&mut self, saved: Vec<SearchBlock>, s: Stmt) -> Stmt {
        let mine = std::mem::replace(&mut self.searches, saved);
        let mut out = s;
        for mut sb in mine.into_iter().rev() {
            sb.body = Box::new(out);
            out = Stmt::Search(sb);
        }
        out
    }

    fn stmt(&mut self, s: &Stmt) -> Result<Stmt> {
        let saved = std::mem::take(&mut self.searches);
        let memo = self.memo.clone();
        let out = match s {
            Stmt::Store { buffer, indices, value, reduce } => {
                let (pos, valid) = self.access(buffer, indices)?;
                let value = self.expr(value)?;
                let store = Stmt::store(buffer, pos, value.clone(), *reduce);
                if valid.as_int() == Some(1) {
                    store
                } else {
                    let zero = zero_of(self.p, buffer);
                    Stmt::if_(
                        valid,
                        store,
                        Some(Stmt::Assert {
                            cond: value.eq(zero),
                            msg: format!("nonzero write to an absent entry of `{buffer}`"),
                        }),
                    )
                }
            }
            Stmt::Seq(v) => {
                let mut out = Vec::new();
                for x in v {
                    out.push(self.stmt(x)?);
                }
                Stmt::Seq(out)
            }
            Stmt::If { cond, then, els } => {
                let cond = self.expr(cond)?;
                let then = self.stmt(then)?;
                let els = match els {
                    Some(e) => Some(self.stmt(e)?),
                    None => None,
                };
                Stmt::if_(cond, then, els)
            }
            Stmt::Let { var, value, body } => {
                let value = self.expr(value)?;
                Stmt::let_(var, value, self.stmt(body)?)
            }
            Stmt::Assert { cond, msg } => Stmt::Assert { cond: self.expr(cond)?, msg: msg.clone() },
            Stmt::SpIter(it) => {
                return Err(Error::Lowering(format!(
                    "nested sparse iteration `{}` is not supported",
                    it.name
                )))
            }
            other => {
                return Err(Error::Lowering(format!(
                    "unexpected statement in an iteration body: {other:?}"
                )))
            }
        };
        let out = self.wrap(saved, out);
        self.memo = memo;
        Ok(out)
    }
}

/// Rewrites coordinate-space accesses in every generated loop nest.
pub fn translate_coordinates(p: &Program) -> Result<Program> {
    if p.stage != Stage::II {
        return Err(Error::Stage(format!("wrong stage: expected II, got {}", p.stage)));
    }
    let mut taken = bound_vars(&p.body);
    taken.extend(p.buffers.iter().map(|b| b.name.clone()));
    let mut err = None;
    let body = map_stmts(&p.body, &mut |s| match s {
        Stmt::Block(mut b) if b.attrs.contains_key(COORDS_ATTR) && err.is_none() => {
            let res = (|| -> Result<Stmt> {
                let axes = decode_coords(p, &b.attrs[COORDS_ATTR])?;
                let coords: BTreeMap<String, usize> =
                    axes.iter().enumerate().map(|(i, a)| (a.var.clone(), i)).collect();
                let mut body = (*b.body).clone();
                while let Stmt::Let { var, body: inner, .. } = &body {
                    if !coords.contains_key(var) {
                        break;
                    }
                    body = (**inner).clone();
                }
                let mut tr = Tr {
                    p,
                    axes,
                    coords,
                    searches: Vec::new(),
                    memo: BTreeMap::new(),
                    taken: &mut taken,
                    block: b.name.clone(),
                };
                let out = tr.stmt(&body)?;
                b.attrs.remove(COORDS_ATTR);
                b.body = Box::new(simplify_stmt(&out));
                Ok(Stmt::Block(b.clone()))
            })();
            match res {
                Ok(s) => s,
                Err(e) => {
                    err = Some(e);
                    Stmt::empty()
                }
            }
        }
        s => s,
    });
    if let Some(e) = err {
        return Err(e);
    }
    let stray = {
        let mut hit = false;
        crate::ir::visit::walk_stmt(&body, &mut |s| {
            if let Stmt::Block(b) = s {
                hit |= b.attrs.contains_key(COORDS_ATTR);
            }
        });
        hit
    };
    if stray {
        return Err(Error::Lowering("coordinate translation left a block untranslated".into()));
    }
    Ok(Program { body, ..p.clone() })
}
