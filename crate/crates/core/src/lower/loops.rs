//! Loop nest generation for sparse iterations.
//!
//! Each iterator axis becomes one loop; a fused iterator becomes a single
//! loop over the entries of its innermost axis, with upper-bound searches on
//! the indptr arrays recovering the outer positions. Blocks are inserted
//! wherever a loop extent depends on an enclosing position, so loops that do
//! not depend on each other share a perfect nest.
//!
//! The innermost block binds every coordinate with a `let` and records the
//! iterator table in its `sparse.coords` attribute for coordinate
//! translation.

use std::collections::BTreeSet;

use crate::axes::{total_entries, Axis, AxisKind};
use crate::error::{Error, Result};
use crate::ir::visit::{bound_vars, fresh_name};
use crate::ir::{
    Binding, Block, Expr, IterKind, Loop, Program, SearchBlock, SearchMode, SpIterKind,
    SparseIteration, Stage, Stmt,
};

pub(crate) const COORDS_ATTR: &str = "sparse.coords";
pub(crate) const COPY_ATTR: &str = "sparse.copy";

#[derive(Clone, Debug)]
pub(crate) struct IterAxis {
    pub var: String,
    pub axis: Axis,
    pub kind: IterKind,
    pub pos_var: String,
}

/// Offset of an iterated axis in its axis space, from position expressions.
pub(crate) fn iter_offset(axes: &[IterAxis], i: usize, pos: &dyn Fn(usize) -> Expr) -> Result<Expr> {
    let a = &axes[i].axis;
    let Some(parent) = &a.parent else {
        return Ok(pos(i));
    };
    let pi = axes.iter().position(|x| &x.axis.name == parent).ok_or_else(|| {
        Error::Lowering(format!("parent `{parent}` of axis `{}` is not iterated", a.name))
    })?;
    let po = iter_offset(axes, pi, pos)?;
    Ok(match a.kind {
        AxisKind::SparseFixed => po.mul(Expr::int(a.nnz_cols.unwrap_or(0) as i64)).add(pos(i)),
        _ => Expr::load(a.indptr.as_deref().unwrap_or_default(), vec![po]).add(pos(i)),
    })
}

/// Coordinate of an iterated axis: its position when dense, the indices
/// entry at its offset when sparse.
pub(crate) fn iter_coord(axes: &[IterAxis], i: usize, pos: &dyn Fn(usize) -> Expr) -> Result<Expr> {
    let a = &axes[i].axis;
    if a.kind.is_dense() {
        return Ok(pos(i));
    }
    let off = iter_offset(axes, i, pos)?;
    Ok(Expr::load(a.indices.as_deref().unwrap_or_default(), vec![off]))
}

pub(crate) fn encode_coords(axes: &[IterAxis]) -> String {
    axes.iter()
        .map(|a| format!("{}:{}:{}:{}", a.var, a.axis.name, a.pos_var, a.kind.letter()))
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn decode_coords(p: &Program, s: &str) -> Result<Vec<IterAxis>> {
    s.split(',')
        .filter(|x| !x.is_empty())
        .map(|item| {
            let f: Vec<&str> = item.split(':').collect();
            if f.len() != 4 {
                return Err(Error::Lowering(format!("malformed coordinate table entry `{item}`")));
            }
            let axis = p
                .axis(f[1])
                .cloned()
                .ok_or_else(|| Error::Lowering(format!("unknown axis `{}`", f[1])))?;
            let kind = if f[3] == "R" { IterKind::Reduction } else { IterKind::Spatial };
            Ok(IterAxis { var: f[0].into(), axis, kind, pos_var: f[2].into() })
        })
        .collect()
}

enum Layer {
    Loop(String, Expr),
    Search(SearchBlock),
    Block(Block),
}

struct Gen<'a> {
    p: &'a Program,
    it: &'a SparseIteration,
    axes: Vec<IterAxis>,
    /// Position expression per axis, valid at the current nesting point.
    pos: Vec<Option<Expr>>,
    layers: Vec<Layer>,
    pending: Vec<(usize, Expr)>,
    blocks: usize,
    taken: BTreeSet<String>,
}

impl Gen<'_> {
    fn pos_of(&self, i: usize) -> Expr {
        self.pos[i].clone().unwrap_or_else(|| Expr::var(&self.axes[i].pos_var))
    }

    fn close_block(&mut self, last: bool) {
        let name = if last {
            self.it.name.clone()
        } else {
            format!("{}_{}", self.it.name, self.blocks)
        };
        self.blocks += 1;
        let mut bindings = Vec::new();
        for (i, value) in std::mem::take(&mut self.pending) {
            bindings.push(Binding {
                var: self.axes[i].pos_var.clone(),
                kind: self.axes[i].kind,
                value,
            });
            self.pos[i] = Some(Expr::var(&self.axes[i].pos_var));
        }
        self.layers.push(Layer::Block(Block::new(&name, bindings, Stmt::empty())));
    }

    fn extent(&self, i: usize) -> Result<Expr> {
        let a = &self.axes[i].axis;
        Ok(match a.kind {
            AxisKind::DenseFixed => Expr::int(a.length as i64),
            AxisKind::SparseFixed => Expr::int(a.nnz_cols.unwrap_or(0) as i64),
            _ => {
                let parent = a.parent.as_ref().unwrap();
                let pi = self.axes.iter().position(|x| &x.axis.name == parent).unwrap();
                let po = iter_offset(&self.axes, pi, &|k| self.pos_of(k))?;
                let ptr = a.indptr.as_deref().unwrap_or_default();
                Expr::load(ptr, vec![po.clone().add(Expr::int(1))]).sub(Expr::load(ptr, vec![po]))
            }
        })
    }

    fn depends_on_pending(&self, i: usize) -> bool {
        let Some(parent) = &self.axes[i].axis.parent else {
            return false;
        };
        self.pending.iter().any(|(k, _)| &self.axes[*k].axis.name == parent)
    }

    fn single(&mut self, i: usize) -> Result<()> {
        if self.depends_on_pending(i) {
            self.close_block(false);
        }
        let extent = self.extent(i)?;
        let var = self.axes[i].var.clone();
        self.layers.push(Layer::Loop(var.clone(), extent));
        self.pending.push((i, Expr::var(&var)));
        Ok(())
    }

    fn fused(&mut self, idx: &[usize]) -> Result<()> {
        if !self.pending.is_empty() {
            self.close_block(false);
        }
        let first = &self.axes[idx[0]].axis;
        if first.parent.is_some() {
            return Err(Error::Lowering(format!(
                "fused iterator in `{}` must start at a root axis, `{}` has a parent",
                self.it.name, first.name
            )));
        }
        let last = &self.axes[*idx.last().unwrap()].axis;
        let total = total_entries(&self.p.axes, last)?;
        let base: String = idx.iter().map(|&i| self.axes[i].var.as_str()).collect();
        let var = fresh_name(&base, &self.taken);
        self.taken.insert(var.clone());
        self.layers.push(Layer::Loop(var.clone(), Expr::int(total as i64)));
        let mut off = Expr::var(&var);
        let mut values = vec![Expr::int(0); idx.len()];
        for m in (1..idx.len()).rev() {
            let a = self.axes[idx[m]].axis.clone();
            let parent = &self.axes[idx[m - 1]].axis;
            if a.parent.as_deref() != Some(parent.name.as_str()) {
                return Err(Error::Lowering(format!(
                    "fused axes `{}` and `{}` are not a parent chain",
                    parent.name, a.name
                )));
            }
            if a.kind.is_fixed() {
                let w = Expr::int(a.nnz_cols.unwrap_or(0) as i64);
                values[m] = off.clone().rem(w.clone());
                off = off.floordiv(w);
            } else {
                let ptr = a.indptr.clone().unwrap_or_default();
                let name = fresh_name(&format!("{}_{}_seg", self.it.name, a.name), &self.taken);
                let result = format!("{name}_p");
                let found = format!("{name}_ok");
                self.taken.extend([name.clone(), result.clone(), found.clone()]);
                let parent_total = total_entries(&self.p.axes, parent)?;
                self.layers.push(Layer::Search(SearchBlock {
                    name,
                    mode: SearchMode::Upper,
                    array: ptr.clone(),
                    lo: Expr::int(0),
                    hi: Expr::int(parent_total as i64),
                    key: off.clone(),
                    result: result.clone(),
                    found,
                    body: Box::new(Stmt::empty()),
                }));
                values[m] = off.sub(Expr::load(&ptr, vec![Expr::var(&result)]));
                off = Expr::var(&result);
            }
        }
        values[0] = off;
        for (k, &i) in idx.iter().enumerate() {
            self.pending.push((i, values[k].clone()));
        }
        self.close_block(false);
        Ok(())
    }
}

fn copy_guard(axes: &[IterAxis]) -> Result<Option<Expr>> {
    let mut guard: Option<Expr> = None;
    for (i, a) in axes.iter().enumerate() {
        if a.axis.kind != AxisKind::SparseFixed || a.axis.parent.is_none() {
            continue;
        }
        let pos = |k: usize| Expr::var(&axes[k].pos_var);
        let off = iter_offset(axes, i, &pos)?;
        let idx = a.axis.indices.as_deref().unwrap_or_default();
        let fresh = Expr::var(&a.pos_var).eq(Expr::int(0)).or(Expr::load(idx, vec![off.clone()])
            .ne(Expr::load(idx, vec![off.sub(Expr::int(1))])));
        guard = Some(match guard {
            None => fresh,
            Some(g) => g.and(fresh),
        });
    }
    Ok(guard)
}

fn lower_iteration(p: &Program, it: &SparseIteration, taken: &mut BTreeSet<String>) -> Result<Stmt> {
    let mut axes = Vec::new();
    for (var, axis, kind) in it.flat_iterators() {
        let a = p
            .axis(&axis)
            .cloned()
            .ok_or_else(|| Error::Lowering(format!("unknown axis `{axis}`")))?;
        let pos_var = fresh_name(&format!("{var}_p"), taken);
        taken.insert(pos_var.clone());
        axes.push(IterAxis { var, axis: a, kind, pos_var });
    }
    for (i, a) in axes.iter().enumerate() {
        if let Some(parent) = &a.axis.parent {
            if !axes[..i].iter().any(|x| &x.axis.name == parent) {
                return Err(Error::Lowering(format!(
                    "iteration `{}`: axis `{}` needs its parent `{parent}` iterated before it",
                    it.name, a.axis.name
                )));
            }
        }
    }
    let n = axes.len();
    let mut g = Gen {
        p,
        it,
        axes,
        pos: vec![None; n],
        layers: Vec::new(),
        pending: Vec::new(),
        blocks: 0,
        taken: taken.clone(),
    };
    let mut k = 0;
    for iter in &it.iterators {
        let idx: Vec<usize> = (k..k + iter.axes.len()).collect();
        k += iter.axes.len();
        if idx.len() == 1 {
            g.single(idx[0])?;
        } else {
            g.fused(&idx)?;
        }
    }
    let needs_last = !g.pending.is_empty() || g.blocks == 0;
    if needs_last {
        g.close_block(true);
    } else if let Some(Layer::Block(b)) = g.layers.last_mut() {
        b.name = it.name.clone();
    }
    *taken = g.taken;
    let axes = g.axes;

    let mut body = (*it.body).clone();
    if matches!(it.kind, SpIterKind::Copy { .. }) {
        if let Some(guard) = copy_guard(&axes)? {
            body = Stmt::if_(guard, body, None);
        }
    }
    for i in (0..axes.len()).rev() {
        let c = iter_coord(&axes, i, &|k| Expr::var(&axes[k].pos_var))?;
        body = Stmt::let_(&axes[i].var, c, body);
    }
    let mut layers = g.layers;
    if let Some(Layer::Block(b)) = layers.last_mut() {
        b.attrs.insert(COORDS_ATTR.into(), encode_coords(&axes));
        if let SpIterKind::Copy { target } = &it.kind {
            b.attrs.insert(COPY_ATTR.into(), target.clone());
        }
    }
    for layer in layers.into_iter().rev() {
        body = match layer {
            Layer::Block(mut b) => {
                b.body = Box::new(body);
                Stmt::Block(b)
            }
            Layer::Search(mut s) => {
                s.body = Box::new(body);
                Stmt::Search(s)
            }
            Layer::Loop(var, extent) => Stmt::Loop(Loop {
                var,
                extent,
                annotations: Vec::new(),
                body: Box::new(body),
            }),
        };
    }
    Ok(body)
}

/// Replaces every sparse iteration by its loop nest. Buffer accesses are left
/// in coordinate space.
pub fn generate_nested_loops(p: &Program) -> Result<Program> {
    if p.stage != Stage::I {
        return Err(Error::Stage(format!("wrong stage: expected I, got {}", p.stage)));
    }
    let mut taken = bound_vars(&p.body);
    taken.extend(p.params.iter().cloned());
    taken.extend(p.buffers.iter().map(|b| b.name.clone()));
    let body = rewrite(p, &p.body, &mut taken)?;
    Ok(Program { stage: Stage::II, body, ..p.clone() })
}

fn rewrite(p: &Program, s: &Stmt, taken: &mut BTreeSet<String>) -> Result<Stmt> {
    Ok(match s {
        Stmt::SpIter(it) => lower_iteration(p, it, taken)?,
        Stmt::Seq(v) => Stmt::Seq(v.iter().map(|x| rewrite(p, x, taken)).collect::<Result<_>>()?),
        Stmt::If { cond, then, els } => Stmt::If {
            cond: cond.clone(),
            then: Box::new(rewrite(p, then, taken)?),
            els: match els {
                Some(e) => Some(Box::new(rewrite(p, e, taken)?)),
                None => None,
            },
        },
        Stmt::Let { var, value, body } => {
            Stmt::Let { var: var.clone(), value: value.clone(), body: Box::new(rewrite(p, body, taken)?) }
        }
        Stmt::Loop(_) | Stmt::Block(_) | Stmt::Search(_) | Stmt::While { .. } | Stmt::Alloc { .. } => {
            return Err(Error::Stage("loop-level construct inside a stage I program".into()))
        }
        other => other.clone(),
    })
}
