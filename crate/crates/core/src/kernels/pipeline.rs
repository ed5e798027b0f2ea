//! From a kernel instance and a format choice to a runnable program and its
//! bindings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{interpret, Array, Bindings, ExecReport, Mode};
use crate::gen;
use crate::ir::{Program, SpIterKind, Stmt};
use crate::lower::{lower_sparse_buffers, lower_sparse_iteration};
use crate::storage::{
    build_csr, build_csr3, csr_to_bsr, csr_to_dbsr, csr_to_ell, csr_to_srbcrs, decompose_hyb, default_hyb_k,
    reconstruct_dense, reconstruct_dense3, CooMatrix, FormatKind, TensorStorage, ValueDType,
};
use crate::transform::{decompose_format, hyb_rules, rule_for_storage, skip_copies, sparse_fuse, FormatRewriteRule};

use super::{build, spmm_oracle, sddmm_oracle, two_stage_rgms_oracle, KernelSpec, Op, Oracle};

/// Layout the sparse operand is computed in.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormatPath {
    Csr,
    Bsr(usize),
    /// Width defaults to the longest row.
    Ell(Option<usize>),
    Dbsr(usize),
    SrBcrs { t: usize, g: usize },
    /// `k` defaults to `ceil(log2(nnz / rows))` per matrix.
    Hyb { c: usize, k: Option<usize> },
}

impl fmt::Display for FormatPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatPath::Csr => write!(f, "csr"),
            FormatPath::Bsr(b) => write!(f, "bsr:b={b}"),
            FormatPath::Ell(None) => write!(f, "ell"),
            FormatPath::Ell(Some(w)) => write!(f, "ell:w={w}"),
            FormatPath::Dbsr(b) => write!(f, "dbsr:b={b}"),
            FormatPath::SrBcrs { t, g } => write!(f, "srbcrs:t={t},g={g}"),
            FormatPath::Hyb { c, k: None } => write!(f, "hyb:c={c}"),
            FormatPath::Hyb { c, k: Some(k) } => write!(f, "hyb:c={c},k={k}"),
        }
    }
}

impl FromStr for FormatPath {
    type Err = Error;

    /// `csr`, `bsr:b=2`, `ell`, `ell:w=4`, `dbsr:b=2`, `srbcrs:t=2,g=2`,
    /// `hyb:c=2`, `hyb:c=2,k=3`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("bad format `{s}`: {m}"));
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params = BTreeMap::new();
        for kv in rest.split(',').filter(|x| !x.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let v: usize = v.trim().parse().map_err(|_| bad("parameter is not a number"))?;
            if v == 0 && k.trim() != "k" {
                return Err(bad("parameters must be positive"));
            }
            params.insert(k.trim().to_string(), v);
        }
        let mut take = |k: &str| params.remove(k);
        let out = match name.trim().to_ascii_lowercase().as_str() {
            "csr" => FormatPath::Csr,
            "bsr" => FormatPath::Bsr(take("b").unwrap_or(2)),
            "ell" => FormatPath::Ell(take("w")),
            "dbsr" => FormatPath::Dbsr(take("b").unwrap_or(2)),
            "srbcrs" => FormatPath::SrBcrs { t: take("t").unwrap_or(2), g: take("g").unwrap_or(2) },
            "hyb" => {
                let c = take("c").unwrap_or(1);
                FormatPath::Hyb { c, k: take("k") }
            }
            other => return Err(bad(&format!("unknown format `{other}`"))),
        };
        if let Some(k) = params.keys().next() {
            return Err(bad(&format!("unknown parameter `{k}`")));
        }
        Ok(out)
    }
}

/// One problem: shape, sparse operand (CSR, or relation-major CSR for RGMS)
/// and dense operands by buffer name.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub spec: KernelSpec,
    pub a: TensorStorage,
    pub dense: BTreeMap<String, Vec<f64>>,
}

fn operands(spec: &KernelSpec, rng: &mut impl Rng) -> BTreeMap<String, Vec<f64>> {
    let dt = spec.dtype;
    let mut m = BTreeMap::new();
    match spec.op {
        Op::SpMM => {
            m.insert("X".to_string(), gen::values(dt, spec.n * spec.d, rng));
        }
        Op::SDDMM => {
            m.insert("X".to_string(), gen::values(dt, spec.m * spec.d, rng));
            m.insert("Y".to_string(), gen::values(dt, spec.d * spec.n, rng));
        }
        Op::RGMS => {
            m.insert("X".to_string(), gen::values(dt, spec.n * spec.d, rng));
            m.insert("W".to_string(), gen::values(dt, spec.relations * spec.d * spec.d_out, rng));
        }
    }
    m
}

impl Instance {
    /// SpMM or SDDMM over a given matrix, random values and operands.
    pub fn from_matrix(op: Op, coo: &CooMatrix, d: usize, dtype: ValueDType, seed: u64) -> Result<Instance> {
        if op == Op::RGMS {
            return Err(Error::InvalidInput("RGMS takes one matrix per relation".into()));
        }
        let mut rng = gen::rng(seed);
        let mut coo = coo.clone();
        gen::fill_values(&mut coo, dtype, &mut rng);
        let a = build_csr(&coo)?.with_dtype(dtype);
        let spec = KernelSpec { op, m: coo.rows, n: coo.cols, d, d_out: 0, relations: 1, nnz: coo.nnz(), dtype };
        let dense = operands(&spec, &mut rng);
        Ok(Instance { spec, a, dense })
    }

    /// RGMS over one matrix per relation.
    pub fn from_relations(rels: &[CooMatrix], d_in: usize, d_out: usize, dtype: ValueDType, seed: u64) -> Result<Instance> {
        let mut rng = gen::rng(seed);
        let mut rels = rels.to_vec();
        for r in &mut rels {
            gen::fill_values(r, dtype, &mut rng);
        }
        let a = build_csr3(&rels)?.with_dtype(dtype);
        Self::from_rgms_storage(a, d_in, d_out, &mut rng)
    }

    /// RGMS with a prepared relation-major adjacency (for example from
    /// `conv_to_rgms`), keeping its values.
    pub fn from_rgms_storage(a: TensorStorage, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Result<Instance> {
        if !matches!(a.kind, FormatKind::Csr3 { .. }) {
            return Err(Error::InvalidInput("RGMS needs relation-major CSR".into()));
        }
        let spec = KernelSpec {
            op: Op::RGMS,
            m: a.shape[1],
            n: a.shape[2],
            d: d_in,
            d_out,
            relations: a.shape[0],
            nnz: a.values.len(),
            dtype: a.value_dtype,
        };
        let dense = operands(&spec, rng);
        Ok(Instance { spec, a, dense })
    }

    /// Random instance with every entry present with probability `density`.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        op: Op,
        m: usize,
        n: usize,
        d: usize,
        d_out: usize,
        relations: usize,
        density: f64,
        dtype: ValueDType,
        seed: u64,
    ) -> Result<Instance> {
        match op {
            Op::RGMS => {
                let rels = (0..relations)
                    .map(|r| gen::random(m, n, density, seed.wrapping_mul(31).wrapping_add(r as u64)))
                    .collect::<Result<Vec<_>>>()?;
                Self::from_relations(&rels, d, d_out, dtype, seed)
            }
            _ => Self::from_matrix(op, &gen::random(m, n, density, seed)?, d, dtype, seed),
        }
    }

    pub fn output_buffer(&self) -> &'static str {
        match self.spec.op {
            Op::SDDMM => "B",
            _ => "Y",
        }
    }

    pub fn oracle(&self) -> Result<Oracle> {
        let s = &self.spec;
        Ok(match s.op {
            Op::SpMM => spmm_oracle(&reconstruct_dense(&self.a)?, &self.dense["X"], s.d),
            Op::SDDMM => sddmm_oracle(&reconstruct_dense(&self.a)?, &self.dense["X"], &self.dense["Y"], s.d),
            Op::RGMS => two_stage_rgms_oracle(&reconstruct_dense3(&self.a)?, &self.dense["X"], &self.dense["W"], s.d, s.d_out),
        })
    }

    /// The output as a dense row-major vector comparable with `oracle`.
    pub fn output_values(&self, b: &Bindings) -> Result<Vec<f64>> {
        let arr = b.get(self.output_buffer())?.to_f64();
        if self.spec.op != Op::SDDMM {
            return Ok(arr);
        }
        let mut out = vec![0.0; self.spec.m * self.spec.n];
        for e in self.a.entries()? {
            out[e.coords[0] * self.spec.n + e.coords[1]] = arr[e.flat];
        }
        Ok(out)
    }

    /// Original operand arrays plus dense operands.
    pub fn bindings(&self) -> Bindings {
        let mut b = bind_storage(Bindings::default(), "A", &self.a, true);
        for (k, v) in &self.dense {
            b.buffers.insert(k.clone(), Array::from_f64(self.spec.dtype, v));
        }
        b
    }
}

/// Adds a storage's aux arrays, and its values under `buffer` when
/// `with_values` is set.
pub fn bind_storage(mut b: Bindings, buffer: &str, s: &TensorStorage, with_values: bool) -> Bindings {
    for (k, v) in &s.aux {
        b.buffers.insert(k.clone(), Array::I32(v.clone()));
    }
    if with_values {
        b.buffers.insert(buffer.to_string(), Array::from_f64(s.value_dtype, &s.values));
    }
    b
}

/// A decomposed stage-I program with the converted storages its new buffers
/// expect.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub path: FormatPath,
    pub program: Program,
    pub rules: Vec<FormatRewriteRule>,
    pub storages: Vec<(String, TensorStorage)>,
    pub padding_ratio: f64,
}

pub type ScheduleFn<'a> = &'a dyn Fn(&Program) -> Result<Program>;

pub(crate) fn relation_matrix(a: &TensorStorage, r: usize) -> Result<CooMatrix> {
    let triplets = a
        .entries()?
        .into_iter()
        .filter(|e| e.coords[0] == r)
        .map(|e| (e.coords[1], e.coords[2], a.values[e.flat]))
        .collect();
    CooMatrix::new(a.shape[1], a.shape[2], triplets)
}

fn longest_row(s: &TensorStorage) -> usize {
    s.aux["J_indptr"].windows(2).map(|w| (w[1] - w[0]) as usize).max().unwrap_or(0).max(1)
}

/// Rules (with their storages) converting one 2D CSR matrix.
fn rules_for(
    csr: &TensorStorage,
    path: &FormatPath,
    axes: &[&str],
    relation: Option<usize>,
    prefix: &str,
) -> Result<Vec<(FormatRewriteRule, TensorStorage)>> {
    let single = |name: &str, s: TensorStorage| -> Result<Vec<(FormatRewriteRule, TensorStorage)>> {
        let name = format!("{prefix}{name}");
        let s = s.renamed(&format!("{name}_"));
        Ok(vec![(rule_for_storage(&name, "A", axes, &s, relation)?, s)])
    };
    match path {
        FormatPath::Csr => Ok(Vec::new()),
        FormatPath::Bsr(b) => single("bsr", csr_to_bsr(csr, *b)?),
        FormatPath::Dbsr(b) => single("dbsr", csr_to_dbsr(csr, *b)?),
        FormatPath::Ell(w) => single("ell", csr_to_ell(csr, w.unwrap_or_else(|| longest_row(csr)))?),
        FormatPath::SrBcrs { t, g } => single("srbcrs", csr_to_srbcrs(csr, *t, *g)?),
        FormatPath::Hyb { c, k } => {
            let k = k.unwrap_or_else(|| default_hyb_k(csr.values.len(), csr.shape[0]));
            hyb_rules(&decompose_hyb(csr, *c, k)?, "A", axes, relation, prefix)
        }
    }
}

/// Fuses the first two iterators of each compute iteration when they form
/// a root-to-child chain of spatial iterators.
fn fuse_rows(p: &Program) -> Result<Program> {
    let mut out = p.clone();
    for it in p.iterations() {
        if !matches!(it.kind, SpIterKind::Compute) || it.iterators.len() < 2 {
            continue;
        }
        let (a, b) = (&it.iterators[0], &it.iterators[1]);
        if a.axes.len() != 1 || b.axes.len() != 1 {
            continue;
        }
        let root = p.axis(&a.axes[0]).is_some_and(|x| x.parent.is_none());
        let child = p.axis(&b.axes[0]).is_some_and(|x| x.parent.as_deref() == Some(a.axes[0].as_str()));
        if root && child {
            if let Ok(q) = sparse_fuse(&out, &it.name, &[&a.axes[0], &b.axes[0]]) {
                out = q;
            }
        }
    }
    Ok(out)
}

/// Builds the kernel and rewrites it into `path`. SDDMM iterations get
/// their row and column iterators fused where the layout allows it.
pub fn prepare(inst: &Instance, path: &FormatPath) -> Result<Prepared> {
    let p = build(&inst.spec)?;
    let mut pairs = Vec::new();
    match inst.spec.op {
        Op::RGMS => {
            for r in 0..inst.spec.relations {
                let csr = build_csr(&relation_matrix(&inst.a, r)?)?.with_dtype(inst.spec.dtype);
                pairs.extend(rules_for(&csr, path, &["R", "I", "J"], Some(r), &format!("r{r}_"))?);
            }
        }
        _ => pairs = rules_for(&inst.a, path, &["I", "J"], None, "")?,
    }
    let (program, rules, storages) = if pairs.is_empty() {
        (p, Vec::new(), Vec::new())
    } else {
        let rules: Vec<FormatRewriteRule> = pairs.iter().map(|(r, _)| r.clone()).collect();
        let (q, _) = decompose_format(&p, &rules)?;
        let storages = pairs.into_iter().map(|(r, s)| (r.new_buffer, s)).collect();
        (q, rules, storages)
    };
    let program = if inst.spec.op == Op::SDDMM { fuse_rows(&program)? } else { program };
    let slots: usize = storages.iter().map(|(_, s)| s.values.len()).sum();
    let real: usize = storages.iter().map(|(_, s)| s.stored_nonzeros).sum();
    let padding_ratio = if slots == 0 { 0.0 } else { (slots - real) as f64 / slots as f64 };
    Ok(Prepared { path: path.clone(), program, rules, storages, padding_ratio })
}

impl Prepared {
    /// Stage-I program; copies are dropped when the converted values are
    /// bound directly.
    pub fn stage1(&self, preconverted: bool) -> Program {
        if preconverted {
            skip_copies(&self.program)
        } else {
            self.program.clone()
        }
    }

    pub fn bindings(&self, inst: &Instance, preconverted: bool) -> Bindings {
        let mut b = inst.bindings();
        for (name, s) in &self.storages {
            b = bind_storage(b, name, &s.clone().with_dtype(inst.spec.dtype), preconverted);
        }
        b
    }

    /// Lowers to stage III, applying `schedule` to the stage-II program.
    pub fn compile(&self, preconverted: bool, schedule: Option<ScheduleFn>) -> Result<Program> {
        let p2 = lower_sparse_iteration(&self.stage1(preconverted))?;
        let p2 = match schedule {
            Some(f) => f(&p2)?,
            None => p2,
        };
        lower_sparse_buffers(&p2)
    }

    /// Compiles, runs, and returns the dense output with the report.
    pub fn run(
        &self,
        inst: &Instance,
        preconverted: bool,
        schedule: Option<ScheduleFn>,
        mode: Mode,
    ) -> Result<(Vec<f64>, ExecReport)> {
        let p3 = self.compile(preconverted, schedule)?;
        let rep = interpret(&p3, self.bindings(inst, preconverted), mode)?;
        if mode == Mode::Checked && !rep.violations.is_empty() {
            return Err(Error::Exec(format!("checked run reported: {}", rep.violations.join("; "))));
        }
        Ok((inst.output_values(&rep.outputs)?, rep))
    }

    /// Number of compute iterations (one per sub-format).
    pub fn compute_iterations(&self) -> usize {
        self.program
            .iterations()
            .iter()
            .filter(|it| matches!(it.kind, SpIterKind::Compute))
            .count()
    }
}

/// Helper for `Stmt`-level counting in tests and the CLI.
pub fn top_level_loops(p: &Program) -> usize {
    match &p.body {
        Stmt::Seq(v) => v.iter().filter(|s| matches!(s, Stmt::Loop(_) | Stmt::Block(_))).count(),
        Stmt::Loop(_) | Stmt::Block(_) => 1,
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::compare;

    fn paths() -> Vec<FormatPath> {
        ["csr", "bsr:b=2", "ell", "dbsr:b=2", "srbcrs:t=2,g=2", "hyb:c=1", "hyb:c=2", "hyb:c=2,k=0"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }

    #[test]
    fn format_strings_round_trip() {
        for p in paths() {
            assert_eq!(p.to_string().parse::<FormatPath>().unwrap(), p);
        }
        assert!("hyb:c=x".parse::<FormatPath>().is_err());
        assert!("coo".parse::<FormatPath>().is_err());
        assert!("bsr:q=2".parse::<FormatPath>().is_err());
    }

    #[test]
    fn every_path_matches_oracle() {
        for op in [Op::SpMM, Op::SDDMM, Op::RGMS] {
            for dt in [ValueDType::I32, ValueDType::F32] {
                for (n, path) in paths().into_iter().enumerate() {
                    let inst = Instance::random(op, 7, 6, 3, 2, 2, 0.35, dt, 11 + n as u64).unwrap();
                    let want = inst.oracle().unwrap();
                    let prep = prepare(&inst, &path).unwrap();
                    for pre in [false, true] {
                        let (got, _) = prep.run(&inst, pre, None, Mode::Checked).unwrap_or_else(|e| {
                            panic!("{op:?} {dt:?} {path} pre={pre}: {e}")
                        });
                        if let Err(m) = compare(&got, &want, dt) {
                            panic!("{op:?} {dt:?} {path} pre={pre}: {m}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hyb_two_two_has_six_compute_iterations() {
        let inst = Instance::random(Op::SpMM, 16, 16, 2, 0, 1, 0.3, ValueDType::I32, 5).unwrap();
        let prep = prepare(&inst, &"hyb:c=2,k=2".parse().unwrap()).unwrap();
        assert_eq!(prep.rules.len(), 6);
        assert_eq!(prep.compute_iterations(), 6);
        crate::transform::check_coverage(&prep.program, &prep.rules, &prep.bindings(&inst, true)).unwrap();
    }
}
