//! Row-work balance: within each bucket of rows that are processed alike,
//! the ratio of the largest to the mean number of real non-zeros per row.

use crate::error::Result;
use crate::kernels::{relation_matrix, FormatPath, Instance, Op};
use crate::storage::{build_csr, decompose_hyb, default_hyb_k, HybDecomposition, TensorStorage};

fn ratio(work: &[usize]) -> Option<f64> {
    let work: Vec<usize> = work.iter().copied().filter(|w| *w > 0).collect();
    if work.is_empty() {
        return None;
    }
    let max = *work.iter().max().unwrap() as f64;
    let mean = work.iter().sum::<usize>() as f64 / work.len() as f64;
    Some(max / mean)
}

fn worst(it: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    it.flatten().reduce(f64::max)
}

/// All non-empty rows of a CSR matrix form one bucket.
pub fn csr_balance(s: &TensorStorage) -> Option<f64> {
    let lens: Vec<usize> = s.aux["J_indptr"].windows(2).map(|w| (w[1] - w[0]) as usize).collect();
    ratio(&lens)
}

/// Each (partition, bucket) cell is a bucket; a stored row's real work is
/// its count of distinct column indices, since padding repeats the last.
pub fn hyb_balance(h: &HybDecomposition) -> Option<f64> {
    worst(h.parts.iter().map(|p| {
        let idx = &p.storage.aux["J_indices"];
        let work: Vec<usize> = idx
            .chunks(p.width.max(1))
            .map(|row| 1 + row.windows(2).filter(|w| w[1] != w[0]).count())
            .collect();
        ratio(&work)
    }))
}

fn balance_2d(csr: &TensorStorage, path: &FormatPath) -> Result<Option<f64>> {
    Ok(match path {
        FormatPath::Csr => csr_balance(csr),
        FormatPath::Hyb { c, k } => {
            let k = k.unwrap_or_else(|| default_hyb_k(csr.values.len(), csr.shape[0]));
            hyb_balance(&decompose_hyb(csr, *c, k)?)
        }
        _ => None,
    })
}

/// Balance of the instance's sparse operand in `path`; `None` for formats
/// without row buckets other than CSR. RGMS takes the worst relation.
pub fn load_balance(inst: &Instance, path: &FormatPath) -> Result<Option<f64>> {
    if inst.spec.op != Op::RGMS {
        return balance_2d(&inst.a, path);
    }
    let mut out = Vec::new();
    for r in 0..inst.spec.relations {
        out.push(balance_2d(&build_csr(&relation_matrix(&inst.a, r)?)?, path)?);
    }
    Ok(worst(out.into_iter()))
}
