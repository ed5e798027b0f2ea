//! Sparse convolution as RGMS: each kernel offset is a relation whose
//! adjacency maps an output point to the input point at that offset.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::{build_csr3, CooMatrix, TensorStorage, ValueDType};

use super::{KernelSpec, Op, Oracle};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvPattern {
    pub offsets: Vec<Vec<i64>>,
}

impl ConvPattern {
    /// All offsets of a `size`^`dims` kernel centred on the origin.
    pub fn cube(dims: usize, size: usize) -> Self {
        let half = (size / 2) as i64;
        let mut offsets = vec![Vec::new()];
        for _ in 0..dims {
            offsets = offsets
                .into_iter()
                .flat_map(|o: Vec<i64>| {
                    (-half..size as i64 - half).map(move |x| {
                        let mut o = o.clone();
                        o.push(x);
                        o
                    })
                })
                .collect();
        }
        ConvPattern { offsets }
    }
}

fn index(points: &[Vec<i64>], what: &str) -> Result<BTreeMap<Vec<i64>, usize>> {
    let mut m = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        if m.insert(p.clone(), i).is_some() {
            return Err(Error::InvalidInput(format!("duplicate {what} coordinate {p:?}")));
        }
    }
    Ok(m)
}

fn neighbour(o: &[i64], off: &[i64]) -> Vec<i64> {
    o.iter().zip(off).map(|(a, b)| a + b).collect()
}

/// Relation-major adjacency (one relation per offset, rows are output
/// points, columns input points) and the matching RGMS shape.
pub fn conv_to_rgms(
    pattern: &ConvPattern,
    in_coords: &[Vec<i64>],
    out_coords: &[Vec<i64>],
    d_in: usize,
    d_out: usize,
    dtype: ValueDType,
) -> Result<(TensorStorage, KernelSpec)> {
    let inputs = index(in_coords, "input")?;
    index(out_coords, "output")?;
    if pattern.offsets.is_empty() {
        return Err(Error::InvalidInput("convolution needs at least one offset".into()));
    }
    let mut rels = Vec::new();
    for off in &pattern.offsets {
        let triplets = out_coords
            .iter()
            .enumerate()
            .filter_map(|(o, p)| inputs.get(&neighbour(p, off)).map(|&i| (o, i, 1.0)))
            .collect();
        rels.push(CooMatrix::new(out_coords.len(), in_coords.len(), triplets)?);
    }
    let a = build_csr3(&rels)?.with_dtype(dtype);
    let spec = KernelSpec {
        op: Op::RGMS,
        m: out_coords.len(),
        n: in_coords.len(),
        d: d_in,
        d_out,
        relations: rels.len(),
        nnz: a.values.len(),
        dtype,
    };
    Ok((a, spec))
}

/// Direct sparse convolution: `Y[o] = Σ_r X[in(o + δ_r)] W[r]`.
pub fn direct_conv_oracle(
    pattern: &ConvPattern,
    in_coords: &[Vec<i64>],
    out_coords: &[Vec<i64>],
    x: &[f64],
    w: &[f64],
    d_in: usize,
    d_out: usize,
) -> Result<Oracle> {
    let inputs = index(in_coords, "input")?;
    let mut values = vec![0.0; out_coords.len() * d_out];
    let mut scale = vec![0.0; out_coords.len() * d_out];
    for (r, off) in pattern.offsets.iter().enumerate() {
        for (o, p) in out_coords.iter().enumerate() {
            let Some(&i) = inputs.get(&neighbour(p, off)) else { continue };
            for l in 0..d_out {
                for k in 0..d_in {
                    let t = x[i * d_in + k] * w[(r * d_in + k) * d_out + l];
                    values[o * d_out + l] += t;
                    scale[o * d_out + l] += t.abs();
                }
            }
        }
    }
    Ok(Oracle { values, scale })
}

/// Rows with more than one non-zero in any relation, which a convolution
/// adjacency never has.
pub fn overfull_rows(a: &TensorStorage) -> Result<BTreeSet<(usize, usize)>> {
    let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for e in a.entries()? {
        *count.entry((e.coords[0], e.coords[1])).or_default() += 1;
    }
    Ok(count.into_iter().filter(|(_, c)| *c > 1).map(|(k, _)| k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::two_stage_rgms_oracle;
    use crate::storage::reconstruct_dense3;

    #[test]
    fn line_of_five_kernel_three() {
        let pts: Vec<Vec<i64>> = (0..5).map(|x| vec![x]).collect();
        let pat = ConvPattern::cube(1, 3);
        let (a, spec) = conv_to_rgms(&pat, &pts, &pts, 2, 2, ValueDType::I32).unwrap();
        assert_eq!(spec.relations, 3);
        assert!(overfull_rows(&a).unwrap().is_empty());
        let x: Vec<f64> = (0..10).map(|v| v as f64).collect();
        let w: Vec<f64> = (0..12).map(|v| (v % 5) as f64 - 2.0).collect();
        let direct = direct_conv_oracle(&pat, &pts, &pts, &x, &w, 2, 2).unwrap();
        let dense = reconstruct_dense3(&a).unwrap();
        assert_eq!(two_stage_rgms_oracle(&dense, &x, &w, 2, 2).values, direct.values);
    }

    #[test]
    fn isolated_point_has_only_centre() {
        let pts = vec![vec![0i64], vec![10]];
        let (a, _) = conv_to_rgms(&ConvPattern::cube(1, 3), &pts, &pts, 1, 1, ValueDType::F32).unwrap();
        let per_rel: Vec<usize> = reconstruct_dense3(&a)
            .unwrap()
            .iter()
            .map(|d| d.data.iter().filter(|v| **v != 0.0).count())
            .collect();
        assert_eq!(per_rel, [0, 2, 0]);
    }

    #[test]
    fn duplicates_rejected() {
        let pts = vec![vec![1i64], vec![1]];
        assert!(conv_to_rgms(&ConvPattern::cube(1, 1), &pts, &pts, 1, 1, ValueDType::I32).is_err());
    }
}
