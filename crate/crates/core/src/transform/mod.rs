//! Stage-I transformations: iterator reordering and fusion, and format
//! decomposition through rewrite rules.

mod decompose;
mod rules;

use crate::error::{Error, Result};
use crate::ir::visit::map_stmts;
use crate::ir::{Program, SpIterator, SparseIteration, Stage, Stmt};

pub use decompose::{
    check_coverage, decompose_format, skip_copies, AuxDataRequest, AuxRequest, FormatRewriteRule,
};
pub use rules::{hyb_rules, identity_rule, rule_for_storage};

fn require_stage_one(p: &Program) -> Result<()> {
    if p.stage != Stage::I {
        return Err(Error::Stage(format!("wrong stage: expected I, got {}", p.stage)));
    }
    Ok(())
}

/// Applies `f` to the named iteration; errors when it does not exist.
fn with_iteration(
    p: &Program,
    name: &str,
    f: &mut dyn FnMut(&SparseIteration) -> Result<SparseIteration>,
) -> Result<Program> {
    require_stage_one(p)?;
    let mut found = false;
    let mut err = None;
    let body = map_stmts(&p.body, &mut |s| match s {
        Stmt::SpIter(it) if it.name == name => {
            found = true;
            match f(&it) {
                Ok(n) => Stmt::SpIter(n),
                Err(e) => {
                    err.get_or_insert(e);
                    Stmt::SpIter(it)
                }
            }
        }
        s => s,
    });
    if let Some(e) = err {
        return Err(e);
    }
    if !found {
        return Err(Error::Lookup(format!("no sparse iteration named `{name}`")));
    }
    Ok(Program { body, ..p.clone() })
}

/// Reorders the iterators of one sparse iteration. `new_order` lists axis
/// names; every axis must follow its ancestors.
pub fn sparse_reorder(p: &Program, iter_name: &str, new_order: &[&str]) -> Result<Program> {
    with_iteration(p, iter_name, &mut |it| {
        let mut remaining: Vec<Option<&SpIterator>> = it.iterators.iter().map(Some).collect();
        let mut out = Vec::new();
        for name in new_order {
            let slot = remaining
                .iter_mut()
                .find(|s| s.is_some_and(|x| x.axes.first().map(String::as_str) == Some(*name)))
                .ok_or_else(|| {
                    Error::Schedule(format!("`{name}` is not an iterator axis of `{iter_name}`"))
                })?;
            out.push(slot.take().unwrap().clone());
        }
        if remaining.iter().any(Option::is_some) {
            return Err(Error::Schedule(format!(
                "new order for `{iter_name}` is not a permutation of its iterators"
            )));
        }
        let mut seen: Vec<&str> = Vec::new();
        for x in &out {
            for a in &x.axes {
                let axis = p.axis(a).ok_or_else(|| Error::Lookup(format!("unknown axis `{a}`")))?;
                if let Some(parent) = &axis.parent {
                    let iterated = it.iterators.iter().any(|y| y.axes.contains(parent));
                    if iterated && !seen.contains(&parent.as_str()) && !x.axes.contains(parent) {
                        return Err(Error::Schedule(format!(
                            "axis `{a}` placed before its parent `{parent}`"
                        )));
                    }
                }
            }
            seen.extend(x.axes.iter().map(String::as_str));
        }
        Ok(SparseIteration { iterators: out, ..it.clone() })
    })
}

/// Fuses contiguous iterators forming a parent chain into one iterator over
/// their non-zero tuples.
pub fn sparse_fuse(p: &Program, iter_name: &str, axes: &[&str]) -> Result<Program> {
    with_iteration(p, iter_name, &mut |it| {
        if axes.len() <= 1 {
            return Ok(it.clone());
        }
        let start = it
            .iterators
            .iter()
            .position(|x| x.axes.len() == 1 && x.axes[0] == axes[0])
            .ok_or_else(|| Error::Schedule(format!("`{}` is not an iterator of `{iter_name}`", axes[0])))?;
        let span = it.iterators.get(start..start + axes.len()).ok_or_else(|| {
            Error::Schedule(format!("fused axes run past the iterators of `{iter_name}`"))
        })?;
        for (k, x) in span.iter().enumerate() {
            if x.axes.len() != 1 || x.axes[0] != axes[k] {
                return Err(Error::Schedule(format!("fused axes of `{iter_name}` are not contiguous")));
            }
            if x.kind != crate::ir::IterKind::Spatial {
                return Err(Error::Schedule(format!("cannot fuse reduction iterator over `{}`", axes[k])));
            }
            if k > 0 {
                let a = p.axis(axes[k]).ok_or_else(|| Error::Lookup(format!("unknown axis `{}`", axes[k])))?;
                if a.parent.as_deref() != Some(axes[k - 1]) {
                    return Err(Error::Schedule(format!(
                        "`{}` is not a child of `{}`",
                        axes[k],
                        axes[k - 1]
                    )));
                }
            }
        }
        let fused = SpIterator {
            axes: span.iter().map(|x| x.axes[0].clone()).collect(),
            vars: span.iter().map(|x| x.vars[0].clone()).collect(),
            kind: crate::ir::IterKind::Spatial,
        };
        let mut iterators = it.iterators[..start].to_vec();
        iterators.push(fused);
        iterators.extend_from_slice(&it.iterators[start + axes.len()..]);
        Ok(SparseIteration { iterators, ..it.clone() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse, structural_equal};

    const SDDMM: &str = "program sddmm stage I {
  axis I dense_fixed length 4;
  axis J sparse_variable parent I length 4 nnz 7 indptr J_indptr indices J_indices;
  axis K dense_fixed length 2;
  buffer A f32 sparse [I, J];
  buffer B f32 sparse [I, J];
  buffer X f32 dense [4, 2];
  buffer Y f32 dense [2, 4];
  body {
    sp_iter sddmm compute [i: I S, j: J S, k: K R] {
      B[i, j] += ((A[i, j] * X[i, k]) * Y[k, j]);
    }
  }
}";

    #[test]
    fn reorder_moves_root_axis() {
        let p = parse(SDDMM).unwrap();
        let q = sparse_reorder(&p, "sddmm", &["I", "K", "J"]).unwrap();
        let order: Vec<_> = q.iterations()[0].iterators.iter().map(|x| x.axes[0].clone()).collect();
        assert_eq!(order, ["I", "K", "J"]);
        assert!(structural_equal(&sparse_reorder(&p, "sddmm", &["I", "J", "K"]).unwrap(), &p));
    }

    #[test]
    fn reorder_rejects_child_first() {
        let p = parse(SDDMM).unwrap();
        assert!(matches!(sparse_reorder(&p, "sddmm", &["J", "I", "K"]), Err(Error::Schedule(_))));
        assert!(matches!(sparse_reorder(&p, "nope", &["I", "J", "K"]), Err(Error::Lookup(_))));
    }

    #[test]
    fn fuse_rules() {
        let p = parse(SDDMM).unwrap();
        let q = sparse_fuse(&p, "sddmm", &["I", "J"]).unwrap();
        assert_eq!(q.iterations()[0].iterators.len(), 2);
        assert_eq!(q.iterations()[0].iterators[0].axes, ["I", "J"]);
        assert!(structural_equal(&sparse_fuse(&p, "sddmm", &["I"]).unwrap(), &p));
        assert!(sparse_fuse(&p, "sddmm", &["I", "K"]).is_err());
        assert!(sparse_fuse(&p, "sddmm", &["J", "K"]).is_err());
    }
}
