//! Seeded synthetic inputs: sparse matrices of several shapes, point clouds,
//! and operand values.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::storage::{CooMatrix, ValueDType};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A value for `dtype`: a non-zero integer in [-4, 4] for i32, uniform in
/// [-1, 1) otherwise.
pub fn value(dtype: ValueDType, rng: &mut impl Rng) -> f64 {
    match dtype {
        ValueDType::I32 => {
            let v = rng.gen_range(1..=4) as f64;
            if rng.gen_bool(0.5) {
                -v
            } else {
                v
            }
        }
        _ => rng.gen_range(-1.0..1.0),
    }
}

pub fn values(dtype: ValueDType, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| value(dtype, rng)).collect()
}

/// Replaces every stored value.
pub fn fill_values(m: &mut CooMatrix, dtype: ValueDType, rng: &mut impl Rng) {
    for t in &mut m.triplets {
        t.2 = value(dtype, rng);
    }
}

fn from_rows(rows: usize, cols: usize, pattern: Vec<Vec<usize>>) -> CooMatrix {
    let triplets = pattern
        .into_iter()
        .enumerate()
        .flat_map(|(r, cs)| cs.into_iter().map(move |c| (r, c, 1.0)))
        .collect();
    CooMatrix { rows, cols, triplets }
}

/// Each entry present independently with probability `density`.
pub fn random(rows: usize, cols: usize, density: f64, seed: u64) -> Result<CooMatrix> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidInput(format!("density {density} outside [0, 1]")));
    }
    let mut g = rng(seed);
    let pattern = (0..rows)
        .map(|_| (0..cols).filter(|_| g.gen_bool(density)).collect())
        .collect();
    Ok(from_rows(rows, cols, pattern))
}

/// Square band matrix: entry (i, j) present when |i - j| <= band.
pub fn banded(n: usize, band: usize) -> Result<CooMatrix> {
    if n > 0 && band >= n {
        return Err(Error::InvalidInput(format!("band {band} must be below n = {n}")));
    }
    let pattern = (0..n).map(|i| (i.saturating_sub(band)..(i + band + 1).min(n)).collect()).collect();
    Ok(from_rows(n, n, pattern))
}

/// Dense `block`×`block` tiles, each present with probability `density`.
pub fn blocksparse(rows: usize, cols: usize, block: usize, density: f64, seed: u64) -> Result<CooMatrix> {
    if block == 0 || !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidInput("block must be positive and density in [0, 1]".into()));
    }
    let mut g = rng(seed);
    let mut pattern = vec![BTreeSet::new(); rows];
    for br in 0..rows.div_ceil(block) {
        for bc in 0..cols.div_ceil(block) {
            if !g.gen_bool(density) {
                continue;
            }
            for r in br * block..((br + 1) * block).min(rows) {
                pattern[r].extend(bc * block..((bc + 1) * block).min(cols));
            }
        }
    }
    Ok(from_rows(rows, cols, pattern.into_iter().map(|s| s.into_iter().collect()).collect()))
}

/// Square matrix whose row degrees follow a Zipf-like law with exponent
/// `alpha`, scaled to the requested average degree. Rows are shuffled so
/// heavy rows are spread out; columns are uniform.
pub fn powerlaw(n: usize, avg_degree: f64, alpha: f64, seed: u64) -> Result<CooMatrix> {
    if n == 0 {
        return Ok(CooMatrix { rows: 0, cols: 0, triplets: Vec::new() });
    }
    if avg_degree < 0.0 || avg_degree > n as f64 {
        return Err(Error::InvalidInput(format!("average degree {avg_degree} outside [0, {n}]")));
    }
    let mut g = rng(seed);
    let weights: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).powf(-alpha)).collect();
    let total: f64 = weights.iter().sum();
    let target = avg_degree * n as f64;
    let mut degrees: Vec<usize> = weights
        .iter()
        .map(|w| ((w / total * target).round() as usize).clamp(1, n))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, g.gen_range(0..=i));
    }
    let mut pattern = vec![Vec::new(); n];
    for (rank, &row) in order.iter().enumerate() {
        let d = std::mem::take(&mut degrees[rank]);
        let mut cols: Vec<usize> = sample(&mut g, n, d).into_vec();
        cols.sort_unstable();
        pattern[row] = cols;
    }
    Ok(from_rows(n, n, pattern))
}

/// `n` distinct integer points in `[0, extent)^dims`.
pub fn pointcloud(n: usize, extent: usize, dims: usize, seed: u64) -> Result<Vec<Vec<i64>>> {
    let cells = (extent as f64).powi(dims as i32);
    if dims == 0 || (n as f64) > cells {
        return Err(Error::InvalidInput(format!("cannot place {n} distinct points in {extent}^{dims}")));
    }
    let mut g = rng(seed);
    let mut seen = BTreeSet::new();
    while seen.len() < n {
        let p: Vec<i64> = (0..dims).map(|_| g.gen_range(0..extent as i64)).collect();
        seen.insert(p);
    }
    Ok(seen.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_interior_rows_have_band_count() {
        let m = banded(16, 2).unwrap();
        let row5 = m.triplets.iter().filter(|t| t.0 == 5).count();
        assert_eq!(row5, 5);
        assert!(banded(4, 4).is_err());
    }

    #[test]
    fn random_density_zero_is_empty() {
        assert_eq!(random(8, 8, 0.0, 1).unwrap().nnz(), 0);
    }

    #[test]
    fn powerlaw_is_deterministic_and_skewed() {
        let a = powerlaw(512, 8.0, 1.0, 7).unwrap();
        assert_eq!(a, powerlaw(512, 8.0, 1.0, 7).unwrap());
        a.validate().unwrap();
        let mut deg = vec![0usize; 512];
        for t in &a.triplets {
            deg[t.0] += 1;
        }
        let max = *deg.iter().max().unwrap();
        assert!(max as f64 > 8.0 * 4.0, "max degree {max}");
    }

    #[test]
    fn pointcloud_points_are_distinct() {
        let p = pointcloud(30, 8, 2, 3).unwrap();
        assert_eq!(p.len(), 30);
        assert!(pointcloud(10, 2, 3, 0).is_err());
    }
}
