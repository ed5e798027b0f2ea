//! Brute-force traversal of a sparse layout by chasing its aux arrays.
//!
//! Entries are produced in lexicographic position order, which is also the
//! order of the flat values array. This walk is deliberately independent of
//! the index expressions produced by buffer flattening so it can serve as
//! their oracle.

use std::collections::BTreeMap;

use crate::axes::{Axis, AxisKind};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    /// Per-axis position (rank within the parent segment).
    pub positions: Vec<usize>,
    /// Per-axis coordinate.
    pub coords: Vec<usize>,
    /// Index into the flat values array.
    pub flat: usize,
}

struct Walker<'a> {
    axes: &'a [Axis],
    parents: Vec<Option<usize>>,
    aux: &'a BTreeMap<String, Vec<i32>>,
    positions: Vec<usize>,
    coords: Vec<usize>,
    offsets: Vec<usize>,
    out: Vec<Entry>,
}

impl Walker<'_> {
    fn array(&self, name: &Option<String>, axis: &Axis) -> Result<&[i32]> {
        let name = name.as_ref().ok_or_else(|| {
            Error::InvalidAxes(format!("axis `{}` lacks an aux array name", axis.name))
        })?;
        self.aux
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::InvalidInput(format!("aux array `{name}` not provided")))
    }

    fn fetch(arr: &[i32], i: usize, name: &str) -> Result<usize> {
        arr.get(i)
            .map(|&v| v as usize)
            .ok_or_else(|| Error::InvalidInput(format!("aux array `{name}` index {i} out of bounds")))
    }

    fn rec(&mut self, depth: usize) -> Result<()> {
        if depth == self.axes.len() {
            let flat = self.out.len();
            self.out.push(Entry {
                positions: self.positions.clone(),
                coords: self.coords.clone(),
                flat,
            });
            return Ok(());
        }
        let axis = &self.axes[depth];
        let parent_offset = self.parents[depth].map(|p| self.offsets[p]);
        let (base, count) = match (axis.kind, parent_offset) {
            (AxisKind::DenseFixed, _) => (0, axis.length),
            (AxisKind::SparseFixed, None) => (0, axis.nnz_cols.unwrap_or(0)),
            (AxisKind::SparseFixed, Some(o)) => {
                let w = axis.nnz_cols.unwrap_or(0);
                (o * w, w)
            }
            (_, Some(o)) => {
                let ptr = self.array(&axis.indptr, axis)?;
                let name = axis.indptr.as_deref().unwrap_or_default();
                let lo = Self::fetch(ptr, o, name)?;
                let hi = Self::fetch(ptr, o + 1, name)?;
                if hi < lo {
                    return Err(Error::InvalidInput(format!("indptr `{name}` decreases at {o}")));
                }
                (lo, hi - lo)
            }
            (_, None) => {
                return Err(Error::InvalidAxes(format!(
                    "variable axis `{}` without parent in layout",
                    axis.name
                )))
            }
        };
        for x in 0..count {
            let off = base + x;
            let coord = if axis.kind.is_sparse() {
                let idx = self.array(&axis.indices, axis)?;
                Self::fetch(idx, off, axis.indices.as_deref().unwrap_or_default())?
            } else {
                x
            };
            self.positions[depth] = x;
            self.coords[depth] = coord;
            self.offsets[depth] = off;
            self.rec(depth + 1)?;
        }
        Ok(())
    }
}

/// Enumerates every stored slot of a layout whose axes are given in buffer
/// order. Each axis's parent must precede it in `axes`.
pub fn walk(axes: &[Axis], aux: &BTreeMap<String, Vec<i32>>) -> Result<Vec<Entry>> {
    let mut parents = Vec::with_capacity(axes.len());
    for (i, a) in axes.iter().enumerate() {
        match &a.parent {
            None => parents.push(None),
            Some(p) => {
                let pi = axes[..i].iter().position(|b| &b.name == p).ok_or_else(|| {
                    Error::InvalidAxes(format!("parent `{p}` of `{}` must precede it", a.name))
                })?;
                parents.push(Some(pi));
            }
        }
    }
    let n = axes.len();
    let mut w = Walker {
        axes,
        parents,
        aux,
        positions: vec![0; n],
        coords: vec![0; n],
        offsets: vec![0; n],
        out: Vec::new(),
    };
    w.rec(0)?;
    Ok(w.out)
}
