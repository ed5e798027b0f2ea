//! Axes: the metadata layer that sparse formats and iteration spaces are
//! composed from.
//!
//! An axis is dense or sparse (are coordinates contiguous?) and fixed or
//! variable (is the number of entries per parent position constant?). Variable
//! axes carry an `indptr` array name, sparse axes an `indices` array name.
//! Parent links form a forest; a dense-fixed axis is always a root.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisKind {
    DenseFixed,
    DenseVariable,
    SparseFixed,
    SparseVariable,
}

impl AxisKind {
    pub const ALL: [AxisKind; 4] = [
        AxisKind::DenseFixed,
        AxisKind::DenseVariable,
        AxisKind::SparseFixed,
        AxisKind::SparseVariable,
    ];

    pub fn is_dense(self) -> bool {
        matches!(self, AxisKind::DenseFixed | AxisKind::DenseVariable)
    }

    pub fn is_sparse(self) -> bool {
        !self.is_dense()
    }

    pub fn is_variable(self) -> bool {
        matches!(self, AxisKind::DenseVariable | AxisKind::SparseVariable)
    }

    pub fn is_fixed(self) -> bool {
        !self.is_variable()
    }

    pub fn keyword(self) -> &'static str {
        match self {
            AxisKind::DenseFixed => "dense_fixed",
            AxisKind::DenseVariable => "dense_variable",
            AxisKind::SparseFixed => "sparse_fixed",
            AxisKind::SparseVariable => "sparse_variable",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        AxisKind::ALL.into_iter().find(|k| k.keyword() == s)
    }
}

/// Width of index arrays. Only 32-bit indices are emitted for now; the tag is
/// carried so the C emitter can honor other widths later.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexDType {
    #[default]
    I32,
}

impl IndexDType {
    pub fn keyword(self) -> &'static str {
        "i32"
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub kind: AxisKind,
    pub parent: Option<String>,
    /// Maximum coordinate extent.
    pub length: usize,
    /// Accumulated number of entries over the whole axis (variable axes).
    pub nnz: Option<usize>,
    /// Entries per parent position (sparse-fixed axes).
    pub nnz_cols: Option<usize>,
    pub indptr: Option<String>,
    pub indices: Option<String>,
    pub index_dtype: IndexDType,
}

impl Axis {
    fn base(name: &str, kind: AxisKind, length: usize) -> Self {
        Axis {
            name: name.to_string(),
            kind,
            parent: None,
            length,
            nnz: None,
            nnz_cols: None,
            indptr: None,
            indices: None,
            index_dtype: IndexDType::I32,
        }
    }

    pub fn dense_fixed(name: &str, length: usize) -> Self {
        Axis::base(name, AxisKind::DenseFixed, length)
    }

    pub fn dense_variable(name: &str, parent: &str, length: usize, nnz: usize, indptr: &str) -> Self {
        Axis {
            parent: Some(parent.to_string()),
            nnz: Some(nnz),
            indptr: Some(indptr.to_string()),
            ..Axis::base(name, AxisKind::DenseVariable, length)
        }
    }

    pub fn sparse_fixed(
        name: &str,
        parent: Option<&str>,
        length: usize,
        nnz_cols: usize,
        indices: &str,
    ) -> Self {
        Axis {
            parent: parent.map(str::to_string),
            nnz_cols: Some(nnz_cols),
            indices: Some(indices.to_string()),
            ..Axis::base(name, AxisKind::SparseFixed, length)
        }
    }

    pub fn sparse_variable(
        name: &str,
        parent: &str,
        length: usize,
        nnz: usize,
        indptr: &str,
        indices: &str,
    ) -> Self {
        Axis {
            parent: Some(parent.to_string()),
            nnz: Some(nnz),
            indptr: Some(indptr.to_string()),
            indices: Some(indices.to_string()),
            ..Axis::base(name, AxisKind::SparseVariable, length)
        }
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }
}

/// A buffer's format: the ordered axes composing its dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FormatSpec {
    pub axes: Vec<String>,
}

/// Root-to-self ancestor path of `axes[i]`, as positions in `axes`.
pub fn anc(axes: &[Axis], i: usize) -> Result<Vec<usize>> {
    if i >= axes.len() {
        return Err(Error::Dependency(format!("axis index {i} out of range")));
    }
    let mut path = vec![i];
    let mut cur = i;
    while let Some(parent) = &axes[cur].parent {
        let p = axes
            .iter()
            .position(|a| &a.name == parent)
            .ok_or_else(|| {
                Error::Dependency(format!(
                    "parent `{parent}` of axis `{}` not in list",
                    axes[cur].name
                ))
            })?;
        if path.contains(&p) {
            return Err(Error::Dependency(format!("cycle through axis `{}`", axes[p].name)));
        }
        path.push(p);
        cur = p;
    }
    path.reverse();
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AxisViolation {
    pub axis: String,
    pub message: String,
}

impl std::fmt::Display for AxisViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "axis `{}`: {}", self.axis, self.message)
    }
}

/// Checks every axis invariant, returning all violations found.
pub fn validate_axes(axes: &[Axis]) -> std::result::Result<(), Vec<AxisViolation>> {
    let mut out = Vec::new();
    let mut push = |axis: &str, message: &str| {
        out.push(AxisViolation { axis: axis.to_string(), message: message.to_string() })
    };
    let position: HashMap<&str, usize> =
        axes.iter().enumerate().map(|(i, a)| (a.name.as_str(), i)).collect();
    let mut seen = HashSet::new();
    for (i, a) in axes.iter().enumerate() {
        if !seen.insert(a.name.as_str()) {
            push(&a.name, "duplicate name");
        }
        if a.kind == AxisKind::DenseFixed && a.parent.is_some() {
            push(&a.name, "dense-fixed axis must not have a parent");
        }
        if a.kind.is_variable() {
            if a.indptr.is_none() {
                push(&a.name, "missing indptr");
            }
            if a.nnz.is_none() {
                push(&a.name, "missing nnz");
            }
            if a.parent.is_none() {
                push(&a.name, "variable axis requires a parent");
            }
        }
        if a.kind.is_sparse() && a.indices.is_none() {
            push(&a.name, "missing indices");
        }
        if a.kind.is_dense() && a.indices.is_some() {
            push(&a.name, "dense axis must not have indices");
        }
        if a.kind == AxisKind::SparseFixed {
            match a.nnz_cols {
                None => push(&a.name, "missing nnz_cols"),
                Some(c) if c > a.length => push(&a.name, "nnz_cols exceeds length"),
                _ => {}
            }
        }
        if let Some(p) = &a.parent {
            match position.get(p.as_str()) {
                None => push(&a.name, "unknown parent"),
                Some(&pi) if pi > i => push(&a.name, "parent declared after child"),
                _ => {}
            }
        }
    }
    // cycle detection over parent links
    for a in axes {
        let mut visited = HashSet::new();
        let mut cur = a;
        while let Some(p) = &cur.parent {
            if !visited.insert(cur.name.as_str()) {
                push(&a.name, "cycle");
                break;
            }
            match position.get(p.as_str()) {
                Some(&pi) => cur = &axes[pi],
                None => break,
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Looks up axes by name.
pub fn find_axis<'a>(axes: &'a [Axis], name: &str) -> Result<&'a Axis> {
    axes.iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::Lookup(format!("unknown axis `{name}`")))
}

/// Number of entries in the space spanned by `axis` and its ancestors.
pub fn total_entries(axes: &[Axis], axis: &Axis) -> Result<usize> {
    match axis.kind {
        AxisKind::DenseFixed => Ok(axis.length),
        AxisKind::DenseVariable | AxisKind::SparseVariable => axis
            .nnz
            .ok_or_else(|| Error::Lowering(format!("axis `{}` has no nnz", axis.name))),
        AxisKind::SparseFixed => {
            let cols = axis
                .nnz_cols
                .ok_or_else(|| Error::Lowering(format!("axis `{}` has no nnz_cols", axis.name)))?;
            match &axis.parent {
                None => Ok(cols),
                Some(p) => Ok(total_entries(axes, find_axis(axes, p)?)? * cols),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csr() -> Vec<Axis> {
        vec![
            Axis::dense_fixed("I", 4),
            Axis::sparse_variable("J", "I", 4, 7, "J_indptr", "J_indices"),
        ]
    }

    #[test]
    fn anc_follows_parent_chain() {
        let a = csr();
        assert_eq!(anc(&a, 1).unwrap(), vec![0, 1]);
        assert_eq!(anc(&a, 0).unwrap(), vec![0]);
        let csf = vec![
            Axis::dense_fixed("I", 4),
            Axis::sparse_variable("J", "I", 4, 6, "J_indptr", "J_indices"),
            Axis::sparse_variable("K", "J", 4, 9, "K_indptr", "K_indices"),
        ];
        assert_eq!(anc(&csf, 2).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn anc_missing_parent_is_dependency_error() {
        let a = vec![Axis::sparse_variable("J", "I", 4, 7, "p", "x")];
        assert!(matches!(anc(&a, 0), Err(Error::Dependency(_))));
    }

    #[test]
    fn validate_reports_violations() {
        assert!(validate_axes(&[Axis::dense_fixed("I", 3)]).is_ok());
        assert!(validate_axes(&csr()).is_ok());

        let mut j = Axis::sparse_variable("J", "I", 4, 7, "p", "x");
        j.parent = None;
        j.indptr = None;
        let v = validate_axes(&[j]).unwrap_err();
        assert!(v.iter().any(|v| v.message == "missing indptr"));

        let mut i = Axis::dense_variable("I", "J", 3, 3, "ip");
        i.parent = Some("J".into());
        let j = Axis::dense_variable("J", "I", 3, 3, "jp");
        let v = validate_axes(&[i, j]).unwrap_err();
        assert!(v.iter().any(|v| v.message == "cycle"));
    }

    #[test]
    fn sparse_fixed_capacity_checked() {
        let a = vec![
            Axis::dense_fixed("I", 4),
            Axis::sparse_fixed("J", Some("I"), 2, 3, "J_indices"),
        ];
        let v = validate_axes(&a).unwrap_err();
        assert_eq!(v[0].message, "nnz_cols exceeds length");
    }

    #[test]
    fn total_entries_of_fixed_child() {
        let a = vec![
            Axis::dense_fixed("I", 4),
            Axis::sparse_fixed("J", Some("I"), 8, 2, "J_indices"),
        ];
        assert_eq!(total_entries(&a, &a[1]).unwrap(), 8);
    }
}
