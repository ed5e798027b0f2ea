//! hyb(c, k): column partitions × power-of-two row-length buckets, each cell
//! an ELL sub-matrix whose rows carry their original row id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::axes::Axis;
use crate::error::Result;

use super::{check_csr_kind, Dense, FormatKind, TensorStorage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybPart {
    pub partition: usize,
    pub bucket: usize,
    pub width: usize,
    /// Axes `I` (row ids, sparse-fixed root) and `J` (sparse-fixed child).
    pub storage: TensorStorage,
}

impl HybPart {
    pub fn rows(&self) -> usize {
        self.storage.axes[0].nnz_cols.unwrap_or(0)
    }

    pub fn row_ids(&self) -> &[i32] {
        &self.storage.aux["I_indices"]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybDecomposition {
    pub c: usize,
    pub k: usize,
    pub rows: usize,
    pub cols: usize,
    /// Partition-major, bucket-minor; all `c * (k + 1)` cells are present,
    /// empty ones included.
    pub parts: Vec<HybPart>,
}

impl HybDecomposition {
    pub fn part(&self, partition: usize, bucket: usize) -> &HybPart {
        &self.parts[partition * (self.k + 1) + bucket]
    }

    pub fn padding_ratio(&self) -> f64 {
        let slots: usize = self.parts.iter().map(|p| p.storage.values.len()).sum();
        let real: usize = self.parts.iter().map(|p| p.storage.stored_nonzeros).sum();
        if slots == 0 {
            0.0
        } else {
            (slots - real) as f64 / slots as f64
        }
    }

    pub fn reconstruct(&self) -> Result<Dense> {
        let mut d = Dense::zeros(self.rows, self.cols);
        for p in &self.parts {
            let s = &p.storage;
            for e in s.entries()? {
                d.data[e.coords[0] * self.cols + e.coords[1]] += s.values[e.flat];
            }
        }
        Ok(d)
    }
}

/// Width of each column partition.
pub fn partition_width(cols: usize, c: usize) -> usize {
    cols.div_ceil(c.max(1)).max(1)
}

/// Bucket of a non-empty row of length `l`: the smallest `i` with `l <= 2^i`.
pub fn bucket_of(l: usize) -> usize {
    l.max(1).next_power_of_two().trailing_zeros() as usize
}

/// `ceil(log2(nnz / rows))`, clamped at 0.
pub fn default_hyb_k(nnz: usize, rows: usize) -> usize {
    if rows == 0 || nnz <= rows {
        return 0;
    }
    bucket_of(nnz.div_ceil(rows))
}

/// Splits a CSR matrix into hyb(c, k) cells. Rows longer than `2^k` within a
/// partition are cut into segments of `2^k`, each stored as its own row of
/// bucket `k`. Empty rows are dropped.
pub fn decompose_hyb(s: &TensorStorage, c: usize, k: usize) -> Result<HybDecomposition> {
    check_csr_kind(s)?;
    let c = c.max(1);
    let (rows, cols) = (s.shape[0], s.shape[1]);
    let pw = partition_width(cols, c);
    let ptr = &s.aux["J_indptr"];
    let idx = &s.aux["J_indices"];
    let cap = 1usize << k;

    // cell -> list of (row id, [(col, value)])
    let mut cells: Vec<Vec<(usize, Vec<(i32, f64)>)>> = vec![Vec::new(); c * (k + 1)];
    for r in 0..rows {
        let (lo, hi) = (ptr[r] as usize, ptr[r + 1] as usize);
        let mut by_part: BTreeMap<usize, Vec<(i32, f64)>> = BTreeMap::new();
        for n in lo..hi {
            by_part.entry(idx[n] as usize / pw).or_default().push((idx[n], s.values[n]));
        }
        for (p, entries) in by_part {
            let b = bucket_of(entries.len());
            if b <= k {
                cells[p * (k + 1) + b].push((r, entries));
            } else {
                for seg in entries.chunks(cap) {
                    cells[p * (k + 1) + k].push((r, seg.to_vec()));
                }
            }
        }
    }

    let mut parts = Vec::with_capacity(cells.len());
    for (cell, list) in cells.into_iter().enumerate() {
        let (partition, bucket) = (cell / (k + 1), cell % (k + 1));
        let width = 1usize << bucket;
        let mut row_ids = Vec::with_capacity(list.len());
        let mut indices = Vec::with_capacity(list.len() * width);
        let mut values = Vec::with_capacity(list.len() * width);
        let mut real = 0;
        for (r, entries) in &list {
            row_ids.push(*r as i32);
            real += entries.len();
            let pad = entries.last().map(|e| e.0).unwrap_or(0);
            for x in 0..width {
                match entries.get(x) {
                    Some(&(col, v)) => {
                        indices.push(col);
                        values.push(v);
                    }
                    None => {
                        indices.push(pad);
                        values.push(0.0);
                    }
                }
            }
        }
        let mut aux = BTreeMap::new();
        aux.insert("I_indices".to_string(), row_ids);
        aux.insert("J_indices".to_string(), indices);
        let storage = TensorStorage {
            kind: FormatKind::HybEll { partition, bucket, width },
            axes: vec![
                Axis::sparse_fixed("I", None, rows.max(list.len()), list.len(), "I_indices"),
                Axis::sparse_fixed("J", Some("I"), cols.max(width), width, "J_indices"),
            ],
            aux,
            values,
            value_dtype: s.value_dtype,
            shape: vec![rows, cols],
            padded_shape: vec![rows, cols],
            stored_nonzeros: real,
        };
        parts.push(HybPart { partition, bucket, width, storage });
    }
    Ok(HybDecomposition { c, k, rows, cols, parts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::tests::m4;
    use crate::storage::{build_csr, CooMatrix};

    #[test]
    fn buckets_of_example() {
        let s = build_csr(&m4()).unwrap();
        let h = decompose_hyb(&s, 1, 2).unwrap();
        assert_eq!(h.parts.len(), 3);
        assert_eq!(h.part(0, 0).row_ids(), &[1]);
        assert_eq!(h.part(0, 1).row_ids(), &[0]);
        assert_eq!(h.part(0, 2).row_ids(), &[2]);
        assert_eq!(h.padding_ratio(), 0.0);
        assert_eq!(h.reconstruct().unwrap(), m4().to_dense());
        for p in &h.parts {
            p.storage.check_invariants().unwrap();
        }
    }

    #[test]
    fn long_rows_split() {
        let s = build_csr(&m4()).unwrap();
        let h = decompose_hyb(&s, 1, 1).unwrap();
        assert_eq!(h.part(0, 1).row_ids(), &[0, 2, 2]);
        assert_eq!(h.reconstruct().unwrap(), m4().to_dense());
    }

    #[test]
    fn zero_matrix_and_lone_row() {
        let z = build_csr(&CooMatrix::new(4, 4, vec![]).unwrap()).unwrap();
        let h = decompose_hyb(&z, 2, 2).unwrap();
        assert_eq!(h.parts.len(), 6);
        assert_eq!(h.padding_ratio(), 0.0);
        let m = CooMatrix::new(1, 8, vec![(0, 1, 1.0), (0, 3, 1.0), (0, 6, 1.0)]).unwrap();
        let h = decompose_hyb(&build_csr(&m).unwrap(), 1, 3).unwrap();
        assert_eq!(h.padding_ratio(), 0.25);
    }

    #[test]
    fn bucket_rule() {
        assert_eq!(bucket_of(1), 0);
        assert_eq!(bucket_of(2), 1);
        assert_eq!(bucket_of(3), 2);
        assert_eq!(bucket_of(4), 2);
        assert_eq!(bucket_of(5), 3);
        for l in 1..=1024usize {
            let w = 1usize << bucket_of(l);
            assert!(2 * (w - l) < w, "l={l}");
        }
        assert_eq!(default_hyb_k(16 * 4096, 4096), 4);
        assert_eq!(default_hyb_k(3, 4), 0);
    }
}
