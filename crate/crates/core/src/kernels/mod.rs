//! Built-in kernels (SpMM, SDDMM, RGMS), their dense oracles, and the
//! sparse-convolution adapter.

mod conv;
mod pipeline;

use serde::{Deserialize, Serialize};

use crate::axes::Axis;
use crate::error::{Error, Result};
use crate::ir::{BufferDecl, Expr, IterKind, Program, SpIterKind, SpIterator, SparseIteration, Stage, Stmt};
use crate::storage::{Dense, ValueDType};

pub use conv::{conv_to_rgms, direct_conv_oracle, overfull_rows, ConvPattern};
pub(crate) use pipeline::relation_matrix;
pub use pipeline::{bind_storage, prepare, top_level_loops, FormatPath, Instance, Prepared, ScheduleFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    SpMM,
    SDDMM,
    RGMS,
}

impl std::str::FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spmm" => Ok(Op::SpMM),
            "sddmm" => Ok(Op::SDDMM),
            "rgms" => Ok(Op::RGMS),
            _ => Err(Error::InvalidInput(format!("unknown op `{s}` (spmm, sddmm, rgms)"))),
        }
    }
}

/// Problem shape: `m`×`n` sparse operand with `nnz` stored entries, feature
/// width `d` (input width for RGMS), output width `d_out` and relation
/// count for RGMS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub op: Op,
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub d_out: usize,
    pub relations: usize,
    pub nnz: usize,
    pub dtype: ValueDType,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.d == 0 || (self.op == Op::RGMS && (self.d_out == 0 || self.relations == 0)) {
            return Err(Error::InvalidInput(format!("kernel dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

fn iter(var: &str, axis: &str, kind: IterKind) -> SpIterator {
    SpIterator::new(var, axis, kind)
}

fn v(x: &str) -> Expr {
    Expr::var(x)
}

fn csr_axes(spec: &KernelSpec) -> Vec<Axis> {
    vec![
        Axis::dense_fixed("I", spec.m),
        Axis::sparse_variable("J", "I", spec.n, spec.nnz, "J_indptr", "J_indices"),
    ]
}

fn program(name: &str, axes: Vec<Axis>, buffers: Vec<BufferDecl>, it: SparseIteration) -> Program {
    Program { axes, buffers, body: Stmt::SpIter(it), ..Program::new(name, Stage::I) }
}

/// `Y[i, k] += A[i, j] * X[j, k]` with `A` in CSR.
pub fn build_spmm(spec: &KernelSpec) -> Result<Program> {
    spec.validate()?;
    let dt = spec.dtype;
    let mut axes = csr_axes(spec);
    axes.push(Axis::dense_fixed("K", spec.d));
    let body = Stmt::store(
        "Y",
        vec![v("i"), v("k")],
        Expr::load("A", vec![v("i"), v("j")]).mul(Expr::load("X", vec![v("j"), v("k")])),
        true,
    );
    Ok(program(
        "spmm",
        axes,
        vec![
            BufferDecl::sparse("A", dt, &["I", "J"]),
            BufferDecl::dense("X", dt, vec![spec.n, spec.d]),
            BufferDecl::dense("Y", dt, vec![spec.m, spec.d]),
        ],
        SparseIteration {
            name: "spmm".into(),
            kind: SpIterKind::Compute,
            iterators: vec![
                iter("i", "I", IterKind::Spatial),
                iter("j", "J", IterKind::Reduction),
                iter("k", "K", IterKind::Spatial),
            ],
            body: Box::new(body),
        },
    ))
}

/// `B[i, j] += A[i, j] * X[i, k] * Y[k, j]` with `A` and `B` sharing one CSR
/// pattern. Iterators are left unfused so formats can still be decomposed;
/// the pipeline fuses `(i, j)` afterwards.
pub fn build_sddmm(spec: &KernelSpec) -> Result<Program> {
    spec.validate()?;
    let dt = spec.dtype;
    let mut axes = csr_axes(spec);
    axes.push(Axis::dense_fixed("K", spec.d));
    let body = Stmt::store(
        "B",
        vec![v("i"), v("j")],
        Expr::load("A", vec![v("i"), v("j")])
            .mul(Expr::load("X", vec![v("i"), v("k")]))
            .mul(Expr::load("Y", vec![v("k"), v("j")])),
        true,
    );
    Ok(program(
        "sddmm",
        axes,
        vec![
            BufferDecl::sparse("A", dt, &["I", "J"]),
            BufferDecl::sparse("B", dt, &["I", "J"]),
            BufferDecl::dense("X", dt, vec![spec.m, spec.d]),
            BufferDecl::dense("Y", dt, vec![spec.d, spec.n]),
        ],
        SparseIteration {
            name: "sddmm".into(),
            kind: SpIterKind::Compute,
            iterators: vec![
                iter("i", "I", IterKind::Spatial),
                iter("j", "J", IterKind::Spatial),
                iter("k", "K", IterKind::Reduction),
            ],
            body: Box::new(body),
        },
    ))
}

/// `Y[i, l] += A[r, i, j] * X[j, k] * W[r, k, l]`, relation axis outermost,
/// `A` in relation-major CSR.
pub fn build_rgms(spec: &KernelSpec) -> Result<Program> {
    spec.validate()?;
    let dt = spec.dtype;
    let r = spec.relations;
    let axes = vec![
        Axis::dense_fixed("R", r),
        Axis::dense_variable("I", "R", spec.m, r * spec.m, "I_indptr"),
        Axis::sparse_variable("J", "I", spec.n, spec.nnz, "J_indptr", "J_indices"),
        Axis::dense_fixed("K", spec.d),
        Axis::dense_fixed("L", spec.d_out),
    ];
    let body = Stmt::store(
        "Y",
        vec![v("i"), v("l")],
        Expr::load("A", vec![v("r"), v("i"), v("j")])
            .mul(Expr::load("X", vec![v("j"), v("k")]))
            .mul(Expr::load("W", vec![v("r"), v("k"), v("l")])),
        true,
    );
    Ok(program(
        "rgms",
        axes,
        vec![
            BufferDecl::sparse("A", dt, &["R", "I", "J"]),
            BufferDecl::dense("X", dt, vec![spec.n, spec.d]),
            BufferDecl::dense("W", dt, vec![r, spec.d, spec.d_out]),
            BufferDecl::dense("Y", dt, vec![spec.m, spec.d_out]),
        ],
        SparseIteration {
            name: "rgms".into(),
            kind: SpIterKind::Compute,
            iterators: vec![
                iter("r", "R", IterKind::Reduction),
                iter("i", "I", IterKind::Spatial),
                iter("j", "J", IterKind::Reduction),
                iter("k", "K", IterKind::Reduction),
                iter("l", "L", IterKind::Spatial),
            ],
            body: Box::new(body),
        },
    ))
}

pub fn build(spec: &KernelSpec) -> Result<Program> {
    match spec.op {
        Op::SpMM => build_spmm(spec),
        Op::SDDMM => build_sddmm(spec),
        Op::RGMS => build_rgms(spec),
    }
}

/// Expected values with, per element, the sum of absolute values of the
/// terms that produce it (the scale for relative float tolerance).
#[derive(Clone, Debug, PartialEq)]
pub struct Oracle {
    pub values: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Dense `Y = A X`, X row-major `a.cols`×`d`.
pub fn spmm_oracle(a: &Dense, x: &[f64], d: usize) -> Oracle {
    let mut values = vec![0.0; a.rows * d];
    let mut scale = vec![0.0; a.rows * d];
    for i in 0..a.rows {
        for j in 0..a.cols {
            let av = a.get(i, j);
            if av == 0.0 {
                continue;
            }
            for k in 0..d {
                let t = av * x[j * d + k];
                values[i * d + k] += t;
                scale[i * d + k] += t.abs();
            }
        }
    }
    Oracle { values, scale }
}

/// Dense `B = A ⊙ (X Y)` over the full `m`×`n` grid.
pub fn sddmm_oracle(a: &Dense, x: &[f64], y: &[f64], d: usize) -> Oracle {
    let (m, n) = (a.rows, a.cols);
    let mut values = vec![0.0; m * n];
    let mut scale = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let av = a.get(i, j);
            if av == 0.0 {
                continue;
            }
            for k in 0..d {
                let t = av * x[i * d + k] * y[k * n + j];
                values[i * n + j] += t;
                scale[i * n + j] += t.abs();
            }
        }
    }
    Oracle { values, scale }
}

/// Two-stage RGMS: `T[r] = X W[r]`, then `Y = Σ_r A[r] T[r]`.
pub fn two_stage_rgms_oracle(a: &[Dense], x: &[f64], w: &[f64], d_in: usize, d_out: usize) -> Oracle {
    let m = a.first().map_or(0, |d| d.rows);
    let n = a.first().map_or(0, |d| d.cols);
    let mut values = vec![0.0; m * d_out];
    let mut scale = vec![0.0; m * d_out];
    for (r, ar) in a.iter().enumerate() {
        let mut t = vec![0.0; n * d_out];
        let mut ts = vec![0.0; n * d_out];
        for j in 0..n {
            for k in 0..d_in {
                for l in 0..d_out {
                    let p = x[j * d_in + k] * w[(r * d_in + k) * d_out + l];
                    t[j * d_out + l] += p;
                    ts[j * d_out + l] += p.abs();
                }
            }
        }
        for i in 0..m {
            for j in 0..n {
                let av = ar.get(i, j);
                if av == 0.0 {
                    continue;
                }
                for l in 0..d_out {
                    values[i * d_out + l] += av * t[j * d_out + l];
                    scale[i * d_out + l] += av.abs() * ts[j * d_out + l];
                }
            }
        }
    }
    Oracle { values, scale }
}

/// Relative tolerance for float outputs; integers must match exactly.
pub const F32_RTOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub index: usize,
    pub got: f64,
    pub want: f64,
}

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "first mismatch at flat index {}: got {}, want {}", self.index, self.got, self.want)
    }
}

/// Compares outputs element-wise: exact for i32, otherwise
/// `|got - want| <= F32_RTOL * max(scale, 1e-30)`.
pub fn compare(got: &[f64], want: &Oracle, dtype: ValueDType) -> std::result::Result<(), Mismatch> {
    if got.len() != want.values.len() {
        return Err(Mismatch { index: got.len().min(want.values.len()), got: f64::NAN, want: f64::NAN });
    }
    for (i, (&g, &w)) in got.iter().zip(&want.values).enumerate() {
        let ok = match dtype {
            ValueDType::I32 => g == w,
            _ => (g - w).abs() <= F32_RTOL * want.scale[i].max(1e-30),
        };
        if !ok {
            return Err(Mismatch { index: i, got: g, want: w });
        }
    }
    Ok(())
}

/// A deliberately wrong build: after the kernel, element 0 of `buffer`
/// gains one. Used to exercise verification and the tuner's gate.
pub fn inject_fault(p: &Program, buffer: &str) -> Program {
    let bump = Stmt::store(buffer, vec![Expr::int(0)], Expr::int(1), true);
    Program { body: Stmt::seq(vec![p.body.clone(), bump]), ..p.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::CooMatrix;

    #[test]
    fn spmm_program_marks_reduction() {
        let spec = KernelSpec { op: Op::SpMM, m: 4, n: 4, d: 2, d_out: 0, relations: 1, nnz: 7, dtype: ValueDType::I32 };
        let text = crate::ir::print(&build_spmm(&spec).unwrap());
        assert!(text.contains("j: J R"), "{text}");
    }

    #[test]
    fn rgms_single_relation_is_spmm_of_xw() {
        let a = CooMatrix::new(2, 3, vec![(0, 1, 2.0), (1, 0, 1.0), (1, 2, 3.0)]).unwrap().to_dense();
        let x = [1.0, 2.0, 0.0, 1.0, 3.0, -1.0];
        let w = [1.0, 1.0, 0.0, 2.0];
        let y = two_stage_rgms_oracle(&[a.clone()], &x, &w, 2, 2);
        // X W = [[1,5],[0,2],[3,1]]
        let xw = [1.0, 5.0, 0.0, 2.0, 3.0, 1.0];
        assert_eq!(y.values, spmm_oracle(&a, &xw, 2).values);
    }

    #[test]
    fn compare_tolerances() {
        let o = Oracle { values: vec![1.0, 2.0], scale: vec![1.0, 2.0] };
        assert!(compare(&[1.0, 2.0], &o, ValueDType::I32).is_ok());
        assert_eq!(compare(&[1.0, 3.0], &o, ValueDType::I32).unwrap_err().index, 1);
        assert!(compare(&[1.0 + 5e-6, 2.0], &o, ValueDType::F32).is_ok());
        assert!(compare(&[1.0 + 5e-5, 2.0], &o, ValueDType::F32).is_err());
    }
}
