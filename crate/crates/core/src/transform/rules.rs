//! Built-in rewrite rules for the layouts produced by `storage`.

use crate::axes::Axis;
use crate::error::{Error, Result};
use crate::ir::{Expr, Layout, Program};
use crate::storage::{FormatKind, HybDecomposition, TensorStorage};

use super::decompose::FormatRewriteRule;

fn v(name: &str) -> Expr {
    Expr::var(name)
}

/// Same layout under fresh names: new axes are the target's axes with
/// `prefix` prepended.
pub fn identity_rule(p: &Program, target: &str, prefix: &str) -> Result<FormatRewriteRule> {
    let decl = p.buffer(target).ok_or_else(|| Error::Decompose(format!("no buffer `{target}`")))?;
    let Layout::Sparse(names) = &decl.layout else {
        return Err(Error::Decompose(format!("`{target}` is not sparse")));
    };
    let rn = |s: &String| format!("{prefix}{s}");
    let mut new_axes = Vec::new();
    for n in names {
        let a = p.axis(n).ok_or_else(|| Error::Decompose(format!("unknown axis `{n}`")))?;
        new_axes.push(Axis {
            name: rn(&a.name),
            parent: a.parent.as_ref().map(rn),
            indptr: a.indptr.as_ref().map(rn),
            indices: a.indices.as_ref().map(rn),
            ..a.clone()
        });
    }
    Ok(FormatRewriteRule {
        name: format!("{prefix}identity").trim_end_matches('_').to_string(),
        target_buffer: target.to_string(),
        new_buffer: format!("{target}_{}", prefix.trim_end_matches('_')),
        axis_map: names.iter().map(|n| (n.clone(), vec![rn(n)])).collect(),
        idx_map: names.iter().map(|n| (rn(n), Some(v(n)))).collect(),
        inv_idx_map: names.iter().map(|n| (n.clone(), v(&rn(n)))).collect(),
        new_axes,
    })
}

/// Rule whose new layout is `s`, a storage built by `storage` (already
/// renamed so its axes do not collide). `target_axes` are the target's row
/// and column axes, preceded by the relation axis when `relation` pins one
/// relation of a 3D buffer.
pub fn rule_for_storage(
    name: &str,
    target: &str,
    target_axes: &[&str],
    s: &TensorStorage,
    relation: Option<usize>,
) -> Result<FormatRewriteRule> {
    let (rel, ti, tj) = match (relation, target_axes) {
        (None, [i, j]) => (None, *i, *j),
        (Some(r), [ra, i, j]) => (Some((*ra, r)), *i, *j),
        _ => return Err(Error::Decompose(format!("rule `{name}`: target axes do not match the relation setting"))),
    };
    let ax: Vec<String> = s.axes.iter().map(|a| a.name.clone()).collect();
    let n = |k: usize| ax[k].clone();
    let c = |x: usize| Expr::int(x as i64);
    let (mut axis_map, idx_map, mut inv) = match s.kind {
        FormatKind::Csr | FormatKind::Ell { .. } | FormatKind::HybEll { .. } => (
            vec![(ti.to_string(), vec![n(0)]), (tj.to_string(), vec![n(1)])],
            vec![(n(0), Some(v(ti))), (n(1), Some(v(tj)))],
            vec![(ti.to_string(), v(&n(0))), (tj.to_string(), v(&n(1)))],
        ),
        FormatKind::Bsr { block: b } | FormatKind::Dbsr { block: b } => (
            vec![(ti.to_string(), vec![n(0), n(2)]), (tj.to_string(), vec![n(1), n(3)])],
            vec![
                (n(0), Some(v(ti).floordiv(c(b)))),
                (n(1), Some(v(tj).floordiv(c(b)))),
                (n(2), Some(v(ti).rem(c(b)))),
                (n(3), Some(v(tj).rem(c(b)))),
            ],
            vec![
                (ti.to_string(), v(&n(0)).mul(c(b)).add(v(&n(2)))),
                (tj.to_string(), v(&n(1)).mul(c(b)).add(v(&n(3)))),
            ],
        ),
        FormatKind::SrBcrs { tile: t, .. } => (
            vec![(ti.to_string(), vec![n(0), n(3)]), (tj.to_string(), vec![n(1), n(2)])],
            vec![
                (n(0), Some(v(ti).floordiv(c(t)))),
                (n(1), None),
                (n(2), Some(v(tj))),
                (n(3), Some(v(ti).rem(c(t)))),
            ],
            vec![(ti.to_string(), v(&n(0)).mul(c(t)).add(v(&n(3)))), (tj.to_string(), v(&n(2)))],
        ),
        FormatKind::Csr3 { .. } => {
            return Err(Error::Decompose(format!("rule `{name}`: 3D storage is not a rule layout")))
        }
    };
    if let Some((ra, r)) = rel {
        axis_map.insert(0, (ra.to_string(), Vec::new()));
        inv.insert(0, (ra.to_string(), c(r)));
    }
    Ok(FormatRewriteRule {
        name: name.to_string(),
        target_buffer: target.to_string(),
        new_buffer: format!("{target}_{name}"),
        new_axes: s.axes.clone(),
        axis_map,
        idx_map,
        inv_idx_map: inv,
    })
}

/// One rule per (partition, bucket) cell of a hyb decomposition, with
/// storages renamed under `prefix`. Returns the rules with the renamed
/// storages they expect at run time.
pub fn hyb_rules(
    h: &HybDecomposition,
    target: &str,
    target_axes: &[&str],
    relation: Option<usize>,
    prefix: &str,
) -> Result<Vec<(FormatRewriteRule, TensorStorage)>> {
    h.parts
        .iter()
        .map(|part| {
            let name = format!("{prefix}hyb_p{}_b{}", part.partition, part.bucket);
            let s = part.storage.renamed(&format!("{name}_"));
            Ok((rule_for_storage(&name, target, target_axes, &s, relation)?, s))
        })
        .collect()
}
