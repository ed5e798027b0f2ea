//! Conversions out of CSR: BSR, ELL, DBSR and SR-BCRS.

use std::collections::BTreeMap;

use crate::axes::Axis;
use crate::error::{Error, Result};

use super::{check_csr_kind, csr_to_coo, FormatKind, TensorStorage};


fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Per block-row map: block column → dense b×b block (row-major).
fn tile_blocks(s: &TensorStorage, b: usize) -> Result<Vec<BTreeMap<usize, Vec<f64>>>> {
    let m = csr_to_coo(s)?;
    let nbr = ceil_div(m.rows, b);
    let mut rows: Vec<BTreeMap<usize, Vec<f64>>> = vec![BTreeMap::new(); nbr];
    for &(r, c, v) in &m.triplets {
        let blk = rows[r / b].entry(c / b).or_insert_with(|| vec![0.0; b * b]);
        blk[(r % b) * b + c % b] = v;
    }
    Ok(rows)
}

fn block_storage(
    s: &TensorStorage,
    b: usize,
    blocks: &[(usize, &BTreeMap<usize, Vec<f64>>)],
    compressed_rows: bool,
) -> TensorStorage {
    let (rows, cols) = (s.shape[0], s.shape[1]);
    let (nbr, nbc) = (ceil_div(rows, b), ceil_div(cols, b));
    let mut indptr = vec![0i32];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (_, row) in blocks {
        for (&bc, data) in row.iter() {
            indices.push(bc as i32);
            values.extend_from_slice(data);
        }
        indptr.push(indices.len() as i32);
    }
    let nblocks = indices.len();
    let mut aux = BTreeMap::new();
    let io = if compressed_rows {
        aux.insert(
            "IO_indices".to_string(),
            blocks.iter().map(|(r, _)| *r as i32).collect::<Vec<_>>(),
        );
        Axis::sparse_fixed("IO", None, nbr, blocks.len(), "IO_indices")
    } else {
        Axis::dense_fixed("IO", nbr)
    };
    aux.insert("JO_indptr".to_string(), indptr);
    aux.insert("JO_indices".to_string(), indices);
    let axes = vec![
        io,
        Axis::sparse_variable("JO", "IO", nbc, nblocks, "JO_indptr", "JO_indices"),
        Axis::dense_fixed("II", b),
        Axis::dense_fixed("JI", b),
    ];
    TensorStorage {
        kind: if compressed_rows { FormatKind::Dbsr { block: b } } else { FormatKind::Bsr { block: b } },
        axes,
        aux,
        values,
        value_dtype: s.value_dtype,
        shape: vec![rows, cols],
        padded_shape: vec![nbr * b, nbc * b],
        stored_nonzeros: s.stored_nonzeros,
    }
}

/// Block-compressed rows with `b`×`b` blocks. Dimensions are padded up to
/// multiples of `b`; a block is stored iff it holds a non-zero.
pub fn csr_to_bsr(s: &TensorStorage, b: usize) -> Result<TensorStorage> {
    check_csr_kind(s)?;
    if b == 0 {
        return Err(Error::InvalidInput("block size must be at least 1".into()));
    }
    let rows = tile_blocks(s, b)?;
    let all: Vec<_> = rows.iter().enumerate().collect();
    Ok(block_storage(s, b, &all, false))
}

/// BSR whose block-row axis is itself compressed: only non-empty block rows
/// are stored, their ids kept in `IO_indices`.
pub fn csr_to_dbsr(s: &TensorStorage, b: usize) -> Result<TensorStorage> {
    check_csr_kind(s)?;
    if b == 0 {
        return Err(Error::InvalidInput("block size must be at least 1".into()));
    }
    let rows = tile_blocks(s, b)?;
    let kept: Vec<_> = rows.iter().enumerate().filter(|(_, r)| !r.is_empty()).collect();
    Ok(block_storage(s, b, &kept, true))
}

/// ELL with exactly `w` slots per row. Short rows repeat their last column
/// index (0 for empty rows) with value 0.
pub fn csr_to_ell(s: &TensorStorage, w: usize) -> Result<TensorStorage> {
    check_csr_kind(s)?;
    if w == 0 {
        return Err(Error::InvalidInput("ELL width must be at least 1".into()));
    }
    let (rows, cols) = (s.shape[0], s.shape[1]);
    let ptr = &s.aux["J_indptr"];
    let idx = &s.aux["J_indices"];
    let mut indices = Vec::with_capacity(rows * w);
    let mut values = Vec::with_capacity(rows * w);
    for r in 0..rows {
        let (lo, hi) = (ptr[r] as usize, ptr[r + 1] as usize);
        if hi - lo > w {
            return Err(Error::Capacity { row: r, len: hi - lo, cap: w });
        }
        let pad = if hi > lo { idx[hi - 1] } else { 0 };
        for x in 0..w {
            if lo + x < hi {
                indices.push(idx[lo + x]);
                values.push(s.values[lo + x]);
            } else {
                indices.push(pad);
                values.push(0.0);
            }
        }
    }
    let mut aux = BTreeMap::new();
    aux.insert("J_indices".to_string(), indices);
    Ok(TensorStorage {
        kind: FormatKind::Ell { width: w },
        axes: vec![
            Axis::dense_fixed("I", rows),
            Axis::sparse_fixed("J", Some("I"), cols.max(w), w, "J_indices"),
        ],
        aux,
        values,
        value_dtype: s.value_dtype,
        shape: vec![rows, cols],
        padded_shape: vec![rows, cols],
        stored_nonzeros: s.stored_nonzeros,
    })
}

/// SR-BCRS(t, g): rows cut into tile rows of height `t`; each non-zero t×1
/// column tile stores its column index; tiles of a tile row are grouped by
/// `g`, the trailing group padded with zero tiles.
///
/// Axes: `T` tile rows, `G` groups (ragged child of `T`), `K` tiles in a
/// group (sparse-fixed child of `G`, carrying column indices), `E` elements
/// in a tile.
pub fn csr_to_srbcrs(s: &TensorStorage, t: usize, g: usize) -> Result<TensorStorage> {
    check_csr_kind(s)?;
    if t == 0 || g == 0 {
        return Err(Error::InvalidInput("tile height and group size must be at least 1".into()));
    }
    let m = csr_to_coo(s)?;
    let ntr = ceil_div(m.rows, t);
    let mut tiles: Vec<BTreeMap<usize, Vec<f64>>> = vec![BTreeMap::new(); ntr];
    for &(r, c, v) in &m.triplets {
        tiles[r / t].entry(c).or_insert_with(|| vec![0.0; t])[r % t] = v;
    }
    let mut group_ptr = vec![0i32];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for row in &tiles {
        let cols: Vec<(&usize, &Vec<f64>)> = row.iter().collect();
        for chunk in cols.chunks(g) {
            for &(c, data) in chunk {
                indices.push(*c as i32);
                values.extend_from_slice(data);
            }
            let last = *chunk.last().unwrap().0 as i32;
            for _ in chunk.len()..g {
                indices.push(last);
                values.extend(std::iter::repeat(0.0).take(t));
            }
        }
        let groups = row.len().div_ceil(g);
        group_ptr.push(group_ptr.last().unwrap() + groups as i32);
    }
    let ngroups = *group_ptr.last().unwrap() as usize;
    let mut aux = BTreeMap::new();
    aux.insert("G_indptr".to_string(), group_ptr);
    aux.insert("K_indices".to_string(), indices);
    Ok(TensorStorage {
        kind: FormatKind::SrBcrs { tile: t, group: g },
        axes: vec![
            Axis::dense_fixed("T", ntr),
            Axis::dense_variable("G", "T", ceil_div(m.cols, g).max(1), ngroups, "G_indptr"),
            Axis::sparse_fixed("K", Some("G"), m.cols.max(g), g, "K_indices"),
            Axis::dense_fixed("E", t),
        ],
        aux,
        values,
        value_dtype: s.value_dtype,
        shape: vec![m.rows, m.cols],
        padded_shape: vec![ntr * t, m.cols],
        stored_nonzeros: s.stored_nonzeros,
    })
}

/// Non-zero count of every real (non-padding) SR-BCRS tile.
pub fn srbcrs_tile_nonzeros(s: &TensorStorage) -> Result<Vec<usize>> {
    let FormatKind::SrBcrs { tile, group } = s.kind else {
        return Err(Error::NotApplicable("expected SR-BCRS storage".into()));
    };
    let idx = &s.aux["K_indices"];
    let mut out = Vec::new();
    for (n, chunk) in s.values.chunks(tile).enumerate() {
        let padding = n % group != 0 && idx[n] == idx[n - 1];
        if !padding {
            out.push(chunk.iter().filter(|v| **v != 0.0).count());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::tests::m4;
    use crate::storage::{build_csr, padding_ratio, reconstruct_dense, CooMatrix};

    #[test]
    fn bsr_of_example() {
        let s = build_csr(&m4()).unwrap();
        let b = csr_to_bsr(&s, 2).unwrap();
        b.check_invariants().unwrap();
        assert_eq!(b.aux["JO_indptr"], vec![0, 2, 4]);
        assert_eq!(b.aux["JO_indices"], vec![0, 1, 0, 1]);
        assert_eq!(&b.values[..4], &[1., 0., 0., 0.]);
        assert_eq!(reconstruct_dense(&b).unwrap(), m4().to_dense());
    }

    #[test]
    fn bsr_one_is_csr() {
        let s = build_csr(&m4()).unwrap();
        let b = csr_to_bsr(&s, 1).unwrap();
        assert_eq!(b.aux["JO_indptr"], s.aux["J_indptr"]);
        assert_eq!(b.aux["JO_indices"], s.aux["J_indices"]);
        assert_eq!(b.values, s.values);
        let z = csr_to_bsr(&build_csr(&CooMatrix::new(4, 4, vec![]).unwrap()).unwrap(), 2).unwrap();
        assert!(z.values.is_empty());
    }

    #[test]
    fn ell_padding_and_capacity() {
        let s = build_csr(&m4()).unwrap();
        let e = csr_to_ell(&s, 4).unwrap();
        e.check_invariants().unwrap();
        assert_eq!(
            e.aux["J_indices"],
            vec![0, 2, 2, 2, 3, 3, 3, 3, 0, 1, 2, 3, 0, 0, 0, 0]
        );
        assert_eq!(reconstruct_dense(&e).unwrap(), m4().to_dense());
        assert_eq!(padding_ratio(&e).unwrap(), 9.0 / 16.0);
        assert_eq!(csr_to_ell(&s, 2).unwrap_err(), Error::Capacity { row: 2, len: 4, cap: 2 });
        let z = csr_to_ell(&build_csr(&CooMatrix::new(3, 3, vec![]).unwrap()).unwrap(), 1).unwrap();
        assert_eq!(padding_ratio(&z).unwrap(), 1.0);
    }

    #[test]
    fn dbsr_skips_empty_block_rows() {
        let m = CooMatrix::new(6, 4, vec![(0, 0, 1.0), (5, 3, 2.0)]).unwrap();
        let s = build_csr(&m).unwrap();
        let d = csr_to_dbsr(&s, 2).unwrap();
        d.check_invariants().unwrap();
        assert_eq!(d.aux["IO_indices"], vec![0, 2]);
        assert_eq!(reconstruct_dense(&d).unwrap(), m.to_dense());
        let full = build_csr(&m4()).unwrap();
        assert_eq!(
            reconstruct_dense(&csr_to_dbsr(&full, 2).unwrap()).unwrap(),
            reconstruct_dense(&csr_to_bsr(&full, 2).unwrap()).unwrap()
        );
    }

    #[test]
    fn srbcrs_grouping() {
        let col = CooMatrix::new(2, 3, vec![(0, 1, 1.0), (1, 1, 2.0)]).unwrap();
        let s = csr_to_srbcrs(&build_csr(&col).unwrap(), 2, 1).unwrap();
        assert_eq!(s.aux["K_indices"], vec![1]);
        assert_eq!(padding_ratio(&s).unwrap(), 0.0);

        let three = CooMatrix::new(2, 5, vec![(0, 0, 1.0), (1, 2, 2.0), (0, 4, 3.0)]).unwrap();
        let s = csr_to_srbcrs(&build_csr(&three).unwrap(), 2, 2).unwrap();
        s.check_invariants().unwrap();
        assert_eq!(s.aux["G_indptr"], vec![0, 2]);
        assert_eq!(s.aux["K_indices"], vec![0, 2, 4, 4]);
        assert_eq!(srbcrs_tile_nonzeros(&s).unwrap(), vec![1, 1, 1]);
        assert_eq!(reconstruct_dense(&s).unwrap(), three.to_dense());

        let m = csr_to_srbcrs(&build_csr(&m4()).unwrap(), 2, 2).unwrap();
        assert_eq!(reconstruct_dense(&m).unwrap(), m4().to_dense());
    }
}
