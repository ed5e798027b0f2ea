//! Concrete sparse storage, format builders and dense reconstruction.
//!
//! Every layout is described by a list of [`Axis`] values plus the aux
//! arrays those axes name. Values are kept as `f64`, which represents every
//! `i32` and `f32` value exactly; the dtype tag decides how they are bound
//! for execution.

mod convert;
mod hyb;
pub mod mtx;
mod walk;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::axes::Axis;
use crate::error::{Error, Result};

pub use convert::{csr_to_bsr, csr_to_dbsr, csr_to_ell, csr_to_srbcrs, srbcrs_tile_nonzeros};
pub use hyb::{bucket_of, decompose_hyb, default_hyb_k, partition_width, HybDecomposition, HybPart};
pub use walk::{walk, Entry};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueDType {
    #[default]
    F32,
    F64,
    I32,
}

impl ValueDType {
    pub fn keyword(self) -> &'static str {
        match self {
            ValueDType::F32 => "f32",
            ValueDType::F64 => "f64",
            ValueDType::I32 => "i32",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(ValueDType::F32),
            "f64" => Some(ValueDType::F64),
            "i32" => Some(ValueDType::I32),
            _ => None,
        }
    }

    pub fn is_float(self) -> bool {
        !matches!(self, ValueDType::I32)
    }
}

/// Coordinate-list matrix used for ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooMatrix {
    pub rows: usize,
    pub cols: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    pub fn new(rows: usize, cols: usize, triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        let m = CooMatrix { rows, cols, triplets };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &(r, c, _) in &self.triplets {
            if r >= self.rows || c >= self.cols {
                return Err(Error::InvalidInput(format!(
                    "entry ({r}, {c}) outside {}x{}",
                    self.rows, self.cols
                )));
            }
            if !seen.insert((r, c)) {
                return Err(Error::InvalidInput(format!("duplicate coordinate ({r}, {c})")));
            }
        }
        Ok(())
    }

    /// Every non-zero of a dense row-major matrix.
    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Self {
        let mut triplets = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = data[r * cols + c];
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        CooMatrix { rows, cols, triplets }
    }

    pub fn to_dense(&self) -> Dense {
        let mut d = Dense::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.triplets {
            d.data[r * self.cols + c] += v;
        }
        d
    }

    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Copy padded with zero rows/cols up to the given shape.
    pub fn padded(&self, rows: usize, cols: usize) -> Dense {
        let mut d = Dense::zeros(rows.max(self.rows), cols.max(self.cols));
        for r in 0..self.rows {
            for c in 0..self.cols {
                d.data[r * d.cols + c] = self.get(r, c);
            }
        }
        d
    }
}

/// Which builder produced a storage; decides how per-axis coordinates map
/// back to matrix coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormatKind {
    Csr,
    /// One CSR matrix per relation, relation axis outermost.
    Csr3 { relations: usize },
    Bsr { block: usize },
    Ell { width: usize },
    Dbsr { block: usize },
    SrBcrs { tile: usize, group: usize },
    /// One ELL sub-matrix of a hyb decomposition; rows are a sparse axis
    /// whose indices map sub-matrix rows back to matrix rows.
    HybEll { partition: usize, bucket: usize, width: usize },
}

impl FormatKind {
    pub fn has_padding(&self) -> bool {
        !matches!(self, FormatKind::Csr | FormatKind::Csr3 { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorStorage {
    pub kind: FormatKind,
    /// Axes in buffer order.
    pub axes: Vec<Axis>,
    pub aux: BTreeMap<String, Vec<i32>>,
    pub values: Vec<f64>,
    pub value_dtype: ValueDType,
    /// Logical matrix shape (relations first for 3D storage).
    pub shape: Vec<usize>,
    /// Shape after padding up to block/tile multiples.
    pub padded_shape: Vec<usize>,
    /// Structural non-zeros of the source matrix held here.
    pub stored_nonzeros: usize,
}

impl TensorStorage {
    pub fn axis_names(&self) -> Vec<String> {
        self.axes.iter().map(|a| a.name.clone()).collect()
    }

    pub fn entries(&self) -> Result<Vec<Entry>> {
        walk(&self.axes, &self.aux)
    }

    /// Maps per-axis coordinates to matrix coordinates (`[row, col]`, or
    /// `[relation, row, col]` for 3D storage).
    pub fn matrix_coords(&self, c: &[usize]) -> Vec<usize> {
        match self.kind {
            FormatKind::Csr | FormatKind::Ell { .. } | FormatKind::HybEll { .. } => vec![c[0], c[1]],
            FormatKind::Csr3 { .. } => vec![c[0], c[1], c[2]],
            FormatKind::Bsr { block } | FormatKind::Dbsr { block } => {
                vec![c[0] * block + c[2], c[1] * block + c[3]]
            }
            FormatKind::SrBcrs { tile, .. } => vec![c[0] * tile + c[3], c[2]],
        }
    }

    /// Prefixes every axis and aux array name, so several layouts can live in
    /// one program.
    pub fn renamed(&self, prefix: &str) -> TensorStorage {
        let map = |s: &String| format!("{prefix}{s}");
        let axes = self
            .axes
            .iter()
            .map(|a| Axis {
                name: map(&a.name),
                parent: a.parent.as_ref().map(map),
                indptr: a.indptr.as_ref().map(map),
                indices: a.indices.as_ref().map(map),
                ..a.clone()
            })
            .collect();
        let aux = self.aux.iter().map(|(k, v)| (map(k), v.clone())).collect();
        TensorStorage { axes, aux, ..self.clone() }
    }

    pub fn with_dtype(mut self, dtype: ValueDType) -> Self {
        self.value_dtype = dtype;
        self
    }

    /// Checks aux-array monotonicity and the values length.
    pub fn check_invariants(&self) -> Result<()> {
        for a in &self.axes {
            if let Some(p) = &a.indptr {
                let arr = self
                    .aux
                    .get(p)
                    .ok_or_else(|| Error::InvalidInput(format!("missing indptr `{p}`")))?;
                if arr.first() != Some(&0) {
                    return Err(Error::InvalidInput(format!("indptr `{p}` must start at 0")));
                }
                if arr.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidInput(format!("indptr `{p}` decreases")));
                }
                if a.nnz.map(|n| n as i32) != arr.last().copied() {
                    return Err(Error::InvalidInput(format!(
                        "indptr `{p}` last entry disagrees with nnz of `{}`",
                        a.name
                    )));
                }
            }
        }
        let entries = self.entries()?;
        if entries.len() != self.values.len() {
            return Err(Error::InvalidInput(format!(
                "values length {} != slot count {}",
                self.values.len(),
                entries.len()
            )));
        }
        // Variable sparse axes: strictly increasing per segment. Fixed sparse
        // axes: non-decreasing, since padding repeats the last index.
        for a in self.axes.iter().filter(|a| a.kind.is_sparse()) {
            let idx = &self.aux[a.indices.as_ref().unwrap()];
            let segments: Vec<(usize, usize)> = match &a.indptr {
                Some(p) => self.aux[p].windows(2).map(|w| (w[0] as usize, w[1] as usize)).collect(),
                None => {
                    let w = a.nnz_cols.unwrap_or(0).max(1);
                    (0..idx.len()).step_by(w).map(|lo| (lo, (lo + w).min(idx.len()))).collect()
                }
            };
            let strict = a.kind.is_variable();
            for (lo, hi) in segments {
                for n in lo + 1..hi {
                    if idx[n] < idx[n - 1] || (strict && idx[n] == idx[n - 1]) {
                        return Err(Error::InvalidInput(format!(
                            "indices of `{}` not sorted at {n}",
                            a.name
                        )));
                    }
                }
            }
            if idx.iter().any(|&x| x < 0 || x as usize >= a.length) {
                return Err(Error::InvalidInput(format!("index of `{}` out of range", a.name)));
            }
        }
        Ok(())
    }
}

/// Builds CSR (axes `I`, `J`; arrays `J_indptr`, `J_indices`).
pub fn build_csr(m: &CooMatrix) -> Result<TensorStorage> {
    m.validate()?;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m.rows];
    for &(r, c, v) in &m.triplets {
        rows[r].push((c, v));
    }
    let mut indptr = Vec::with_capacity(m.rows + 1);
    let mut indices = Vec::with_capacity(m.nnz());
    let mut values = Vec::with_capacity(m.nnz());
    indptr.push(0i32);
    for row in &mut rows {
        row.sort_by_key(|e| e.0);
        for &(c, v) in row.iter() {
            indices.push(c as i32);
            values.push(v);
        }
        indptr.push(indices.len() as i32);
    }
    let nnz = indices.len();
    let axes = vec![
        Axis::dense_fixed("I", m.rows),
        Axis::sparse_variable("J", "I", m.cols, nnz, "J_indptr", "J_indices"),
    ];
    let mut aux = BTreeMap::new();
    aux.insert("J_indptr".to_string(), indptr);
    aux.insert("J_indices".to_string(), indices);
    Ok(TensorStorage {
        kind: FormatKind::Csr,
        axes,
        aux,
        values,
        value_dtype: ValueDType::default(),
        shape: vec![m.rows, m.cols],
        padded_shape: vec![m.rows, m.cols],
        stored_nonzeros: nnz,
    })
}

/// Builds a 3D relation-major CSR from one matrix per relation. Axes: `R`
/// (relations), `I` (rows, a ragged child of `R` with uniform segments),
/// `J` (columns).
pub fn build_csr3(relations: &[CooMatrix]) -> Result<TensorStorage> {
    let first = relations
        .first()
        .ok_or_else(|| Error::InvalidInput("at least one relation required".into()))?;
    let (rows, cols) = (first.rows, first.cols);
    let mut row_ptr = vec![0i32];
    let mut indptr = vec![0i32];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for m in relations {
        if (m.rows, m.cols) != (rows, cols) {
            return Err(Error::InvalidInput("relations must share one shape".into()));
        }
        let csr = build_csr(m)?;
        let base = *indptr.last().unwrap();
        indptr.extend(csr.aux["J_indptr"][1..].iter().map(|p| p + base));
        indices.extend_from_slice(&csr.aux["J_indices"]);
        values.extend_from_slice(&csr.values);
        row_ptr.push(row_ptr.last().unwrap() + rows as i32);
    }
    let r = relations.len();
    let nnz = indices.len();
    let axes = vec![
        Axis::dense_fixed("R", r),
        Axis::dense_variable("I", "R", rows, r * rows, "I_indptr"),
        Axis::sparse_variable("J", "I", cols, nnz, "J_indptr", "J_indices"),
    ];
    let mut aux = BTreeMap::new();
    aux.insert("I_indptr".to_string(), row_ptr);
    aux.insert("J_indptr".to_string(), indptr);
    aux.insert("J_indices".to_string(), indices);
    Ok(TensorStorage {
        kind: FormatKind::Csr3 { relations: r },
        axes,
        aux,
        values,
        value_dtype: ValueDType::default(),
        shape: vec![r, rows, cols],
        padded_shape: vec![r, rows, cols],
        stored_nonzeros: nnz,
    })
}

pub(crate) fn check_csr_kind(s: &TensorStorage) -> Result<()> {
    if s.kind != FormatKind::Csr {
        return Err(Error::NotApplicable(format!("expected CSR storage, got {:?}", s.kind)));
    }
    Ok(())
}

/// Extracts the COO matrix of a CSR storage.
pub fn csr_to_coo(s: &TensorStorage) -> Result<CooMatrix> {
    check_csr_kind(s)?;
    let triplets = s
        .entries()?
        .into_iter()
        .map(|e| (e.coords[0], e.coords[1], s.values[e.flat]))
        .collect();
    Ok(CooMatrix { rows: s.shape[0], cols: s.shape[1], triplets })
}

/// Dense matrix of a 2D storage over its padded shape; padding contributes 0.
pub fn reconstruct_dense(s: &TensorStorage) -> Result<Dense> {
    if s.padded_shape.len() != 2 {
        return Err(Error::NotApplicable("expected a 2D storage".into()));
    }
    let mut d = Dense::zeros(s.padded_shape[0], s.padded_shape[1]);
    for e in s.entries()? {
        let mc = s.matrix_coords(&e.coords);
        d.data[mc[0] * d.cols + mc[1]] += s.values[e.flat];
    }
    Ok(d)
}

/// One dense matrix per relation of a 3D storage.
pub fn reconstruct_dense3(s: &TensorStorage) -> Result<Vec<Dense>> {
    if s.padded_shape.len() != 3 {
        return Err(Error::NotApplicable("expected a 3D storage".into()));
    }
    let (r, rows, cols) = (s.padded_shape[0], s.padded_shape[1], s.padded_shape[2]);
    let mut out = vec![Dense::zeros(rows, cols); r];
    for e in s.entries()? {
        let mc = s.matrix_coords(&e.coords);
        out[mc[0]].data[mc[1] * cols + mc[2]] += s.values[e.flat];
    }
    Ok(out)
}

/// Fraction of stored slots that are padding.
pub fn padding_ratio(s: &TensorStorage) -> Result<f64> {
    if !s.kind.has_padding() {
        return Err(Error::NotApplicable(format!("{:?} has no padding", s.kind)));
    }
    let slots = s.values.len();
    if slots == 0 {
        return Ok(0.0);
    }
    Ok((slots - s.stored_nonzeros) as f64 / slots as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn m4() -> CooMatrix {
        let d = [1., 0., 2., 0., 0., 0., 0., 3., 4., 5., 6., 7., 0., 0., 0., 0.];
        CooMatrix::from_dense(4, 4, &d)
    }

    #[test]
    fn csr_of_example_matrix() {
        let s = build_csr(&m4()).unwrap();
        assert_eq!(s.aux["J_indptr"], vec![0, 2, 3, 7, 7]);
        assert_eq!(s.aux["J_indices"], vec![0, 2, 3, 0, 1, 2, 3]);
        assert_eq!(s.values, vec![1., 2., 3., 4., 5., 6., 7.]);
        s.check_invariants().unwrap();
        assert_eq!(reconstruct_dense(&s).unwrap(), m4().to_dense());
    }

    #[test]
    fn csr_edge_cases() {
        let s = build_csr(&CooMatrix::new(3, 3, vec![]).unwrap()).unwrap();
        assert_eq!(s.aux["J_indptr"], vec![0, 0, 0, 0]);
        assert!(s.values.is_empty());
        let s = build_csr(&CooMatrix::new(1, 1, vec![(0, 0, 5.0)]).unwrap()).unwrap();
        assert_eq!(s.aux["J_indptr"], vec![0, 1]);
        assert_eq!(s.aux["J_indices"], vec![0]);
        assert_eq!(s.values, vec![5.0]);
    }

    #[test]
    fn duplicate_rejected() {
        let m = CooMatrix { rows: 2, cols: 2, triplets: vec![(0, 0, 1.0), (0, 0, 2.0)] };
        assert!(build_csr(&m).is_err());
    }

    #[test]
    fn csr_padding_not_applicable() {
        let s = build_csr(&m4()).unwrap();
        assert!(matches!(padding_ratio(&s), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn csr3_round_trip() {
        let a = m4();
        let b = CooMatrix::new(4, 4, vec![(3, 1, 9.0)]).unwrap();
        let s = build_csr3(&[a.clone(), b.clone()]).unwrap();
        s.check_invariants().unwrap();
        assert_eq!(s.aux["I_indptr"], vec![0, 4, 8]);
        let d = reconstruct_dense3(&s).unwrap();
        assert_eq!(d[0], a.to_dense());
        assert_eq!(d[1], b.to_dense());
    }

    #[test]
    fn renamed_prefixes_everything() {
        let s = build_csr(&m4()).unwrap().renamed("A_");
        assert_eq!(s.axes[1].parent.as_deref(), Some("A_I"));
        assert!(s.aux.contains_key("A_J_indptr"));
        assert_eq!(reconstruct_dense(&s).unwrap(), m4().to_dense());
    }
}
