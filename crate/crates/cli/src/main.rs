//! `sparsekit` command-line driver.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage, 3 internal error.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sparsekit::exec::{compiler_available, emit_c, interpret, Mode, NativeKernel};
use sparsekit::ir::{print, Program};
use sparsekit::kernels::{compare, inject_fault, prepare, FormatPath, Instance, Op, Prepared};
use sparsekit::lower::{lower_sparse_buffers, lower_sparse_iteration};
use sparsekit::schedule::{apply_script, parse_script};
use sparsekit::storage::mtx::{read_mtx_file, write_mtx};
use sparsekit::storage::{build_csr, decompose_hyb, default_hyb_k, CooMatrix, ValueDType};
use sparsekit::tune::{csr_balance, hyb_balance, run_trials, Backend, SearchSpace, TrialOptions};
use sparsekit::{gen, Error};

#[derive(Parser)]
#[command(name = "sparsekit", version, about = "Composable sparse kernels: build, lower, run, verify, benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Summarize a Matrix Market file.
    Info { matrix: PathBuf },
    /// Generate a synthetic matrix (or point cloud).
    Gen(GenArgs),
    /// Build a kernel and dump one pipeline stage.
    Compile(CompileArgs),
    /// Apply format rewrite rules and print the stage-I program.
    Decompose(DecomposeArgs),
    /// Compile and execute once.
    Run(RunArgs),
    /// Compare compiled kernels against the dense oracle.
    Verify(VerifyArgs),
    /// Time formats and schedules.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Powerlaw,
    Banded,
    Blocksparse,
    Random,
    Pointcloud,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    kind: GenKind,
    /// Rows (and columns unless --cols is given); point count for pointcloud.
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    #[arg(long, default_value_t = 2)]
    band: usize,
    #[arg(long, default_value_t = 4)]
    block: usize,
    #[arg(long, default_value_t = 8.0)]
    avg_degree: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Grid extent per dimension for pointcloud.
    #[arg(long, default_value_t = 16)]
    extent: usize,
    #[arg(long, default_value_t = 3)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DType {
    F32,
    F64,
    I32,
}

impl From<DType> for ValueDType {
    fn from(d: DType) -> Self {
        match d {
            DType::F32 => ValueDType::F32,
            DType::F64 => ValueDType::F64,
            DType::I32 => ValueDType::I32,
        }
    }
}

/// The problem instance: a matrix file (one per relation for RGMS) or a
/// random matrix of the given shape.
#[derive(Args, Clone)]
struct Problem {
    #[arg(long, default_value = "spmm", value_parser = parse_op)]
    op: Op,
    #[arg(long)]
    matrix: Vec<PathBuf>,
    #[arg(long, default_value_t = 64)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    cols: usize,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    /// Relation count for a random RGMS instance.
    #[arg(long, default_value_t = 2)]
    relations: usize,
    /// Feature width (input width for RGMS).
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 32)]
    d_out: usize,
    #[arg(long, value_enum, default_value = "f32")]
    dtype: DType,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Ir1,
    Ir2,
    Ir3,
    C,
}

#[derive(Args)]
struct CompileArgs {
    #[command(flatten)]
    problem: Problem,
    #[arg(long, default_value = "csr", value_parser = parse_format)]
    format: FormatPath,
    /// Schedule script applied to the stage-II program.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ir3")]
    emit: Emit,
    /// Drop copy iterations; converted storage is then an input.
    #[arg(long)]
    preconverted: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    problem: Problem,
    /// Target format, e.g. `hyb:c=2,k=3`.
    #[arg(long, value_parser = parse_format)]
    rules: FormatPath,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Interp,
    Native,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    problem: Problem,
    #[arg(long, default_value = "csr", value_parser = parse_format)]
    format: FormatPath,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "interp")]
    backend: BackendArg,
    /// Interpret with bounds checks.
    #[arg(long)]
    checked: bool,
    /// Also print the dense output values.
    #[arg(long)]
    print_output: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    problem: Problem,
    #[arg(long, default_value = "csr", value_parser = parse_format)]
    format: FormatPath,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, value_enum, default_value = "interp")]
    backend: BackendArg,
    /// Deliberately corrupt the first output element.
    #[arg(long)]
    inject_fault: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    problem: Problem,
    /// Comma-separated formats, e.g. `csr,hyb:c=2,k=2,ell`.
    #[arg(long, default_value = "csr", value_parser = parse_formats)]
    formats: Formats,
    /// Add the hyb grid over --c and --k-offsets.
    #[arg(long)]
    tune: bool,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    c: Vec<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0")]
    k_offsets: Vec<i64>,
    /// Split factors for the feature loop.
    #[arg(long, value_delimiter = ',')]
    splits: Vec<usize>,
    /// Also try each point with its outermost loop parallel.
    #[arg(long)]
    parallel: bool,
    /// Reduction group sizes for the feature loop.
    #[arg(long, value_delimiter = ',')]
    rfactors: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long, value_enum, default_value = "off")]
    flush_cache: OnOff,
    /// Defaults to native when a C compiler is available.
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Also write one CSV row per trial.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone)]
struct Formats(Vec<FormatPath>);

fn parse_op(s: &str) -> Result<Op, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<FormatPath, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Splits on commas, gluing `key=value` pieces back onto the format they
/// parameterize.
fn parse_formats(s: &str) -> Result<Formats, String> {
    let mut items: Vec<String> = Vec::new();
    for piece in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match items.last_mut() {
            Some(last) if piece.contains('=') && !piece.contains(':') => {
                last.push(',');
                last.push_str(piece);
            }
            _ => items.push(piece.to_string()),
        }
    }
    if items.is_empty() {
        return Err("no formats given".into());
    }
    items.iter().map(|f| parse_format(f)).collect::<Result<Vec<_>, _>>().map(Formats)
}

enum Failure {
    Verify(String),
    Usage(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Parse { .. } | Error::Io(_) => Failure::Usage(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome<T> = Result<T, Failure>;

/// Tags a pipeline error with the stage it came from.
fn at_stage<T>(stage: &str, r: sparsekit::Result<T>) -> Outcome<T> {
    r.map_err(|e| match Failure::from(e) {
        Failure::Internal(m) => Failure::Internal(format!("{stage}: {m}")),
        Failure::Usage(m) => Failure::Usage(format!("{stage}: {m}")),
        f => f,
    })
}

/// Writes to stdout, ignoring a closed pipe.
fn say(text: &str) {
    let mut o = std::io::stdout().lock();
    let _ = o.write_all(text.as_bytes()).and_then(|_| o.flush());
}

fn emit(out: Option<&Path>, text: &str) -> Outcome<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => say(text),
    }
    Ok(())
}

fn instance(p: &Problem, seed: u64) -> Outcome<Instance> {
    let dtype = p.dtype.into();
    let mats = p.matrix.iter().map(|f| read_mtx_file(f)).collect::<sparsekit::Result<Vec<CooMatrix>>>()?;
    let inst = match (p.op, mats.as_slice()) {
        (Op::RGMS, []) => Instance::random(Op::RGMS, p.rows, p.cols, p.d, p.d_out, p.relations, p.density, dtype, seed)?,
        (Op::RGMS, rels) => Instance::from_relations(rels, p.d, p.d_out, dtype, seed)?,
        (op, []) => Instance::random(op, p.rows, p.cols, p.d, p.d_out, 1, p.density, dtype, seed)?,
        (op, [m]) => Instance::from_matrix(op, m, p.d, dtype, seed)?,
        (_, _) => return Err(Failure::Usage("only RGMS takes more than one --matrix".into())),
    };
    inst.spec.validate()?;
    Ok(inst)
}

fn schedule_text(path: Option<&PathBuf>) -> Outcome<Option<String>> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path)?;
    parse_script(&text)?;
    Ok(Some(text))
}

/// Stage-III program for one instance and format.
fn build(prep: &Prepared, script: Option<&str>) -> Outcome<Program> {
    let p2 = at_stage("lower I->II", lower_sparse_iteration(&prep.stage1(false)))?;
    let p2 = match script {
        Some(s) => at_stage("schedule", apply_script(&p2, s))?,
        None => p2,
    };
    at_stage("lower II->III", lower_sparse_buffers(&p2))
}

fn cmd_info(path: &Path) -> Outcome<()> {
    let coo = read_mtx_file(path)?;
    let csr = build_csr(&coo)?;
    let lens: Vec<usize> = csr.aux["J_indptr"].windows(2).map(|w| (w[1] - w[0]) as usize).collect();
    let k0 = default_hyb_k(coo.nnz(), coo.rows);
    let mut hyb = Vec::new();
    for c in [1, 2, 4, 8, 16] {
        let h = decompose_hyb(&csr, c, k0)?;
        hyb.push(json!({ "c": c, "k": k0, "padding_ratio": h.padding_ratio(), "load_balance": hyb_balance(&h) }));
    }
    let report = json!({
        "rows": coo.rows,
        "cols": coo.cols,
        "nnz": coo.nnz(),
        "row_nnz_min": lens.iter().min(),
        "row_nnz_max": lens.iter().max(),
        "row_nnz_mean": if coo.rows == 0 { 0.0 } else { coo.nnz() as f64 / coo.rows as f64 },
        "csr_load_balance": csr_balance(&csr),
        "hyb": hyb,
    });
    say(&format!("{}\n", serde_json::to_string_pretty(&report).expect("json")));
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Outcome<()> {
    let cols = a.cols.unwrap_or(a.n);
    let coo = match a.kind {
        GenKind::Random => gen::random(a.n, cols, a.density, a.seed)?,
        GenKind::Banded => gen::banded(a.n, a.band)?,
        GenKind::Blocksparse => gen::blocksparse(a.n, cols, a.block, a.density, a.seed)?,
        GenKind::Powerlaw => gen::powerlaw(a.n, a.avg_degree, a.alpha, a.seed)?,
        GenKind::Pointcloud => {
            let pts = gen::pointcloud(a.n, a.extent, a.dims, a.seed)?;
            let mut s = String::new();
            for p in pts {
                let line: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                writeln!(s, "{}", line.join(" ")).expect("write to string");
            }
            return emit(a.out.as_deref(), &s);
        }
    };
    emit(a.out.as_deref(), &write_mtx(&coo))
}

fn cmd_compile(a: &CompileArgs) -> Outcome<()> {
    let script = schedule_text(a.schedule.as_ref())?;
    let inst = instance(&a.problem, a.problem.seed)?;
    let prep = at_stage("decompose", prepare(&inst, &a.format))?;
    let p1 = prep.stage1(a.preconverted);
    if a.emit == Emit::Ir1 {
        return emit(a.out.as_deref(), &print(&p1));
    }
    let p2 = at_stage("lower I->II", lower_sparse_iteration(&p1))?;
    let p2 = match &script {
        Some(s) => at_stage("schedule", apply_script(&p2, s))?,
        None => p2,
    };
    if a.emit == Emit::Ir2 {
        return emit(a.out.as_deref(), &print(&p2));
    }
    let p3 = at_stage("lower II->III", lower_sparse_buffers(&p2))?;
    let text = match a.emit {
        Emit::C => at_stage("emit C", emit_c(&p3))?,
        _ => print(&p3),
    };
    emit(a.out.as_deref(), &text)
}

fn cmd_decompose(a: &DecomposeArgs) -> Outcome<()> {
    let inst = instance(&a.problem, a.problem.seed)?;
    let prep = at_stage("decompose", prepare(&inst, &a.rules))?;
    eprintln!(
        "{} rule(s), {} compute iteration(s), padding ratio {:.4}",
        prep.rules.len(),
        prep.compute_iterations(),
        prep.padding_ratio
    );
    emit(a.out.as_deref(), &print(&prep.program))
}

/// Runs one compiled program on the instance, returning the dense output.
fn execute(inst: &Instance, prep: &Prepared, p3: &Program, backend: BackendArg, mode: Mode) -> Outcome<(Vec<f64>, serde_json::Value)> {
    let b = prep.bindings(inst, false);
    match backend {
        BackendArg::Interp => {
            let r = at_stage("execute", interpret(p3, b, mode))?;
            if !r.violations.is_empty() {
                return Err(Failure::Internal(format!("checked run reported: {}", r.violations.join("; "))));
            }
            let out = inst.output_values(&r.outputs)?;
            Ok((out, json!({ "loads": r.stats.loads, "stores": r.stats.stores, "flops": r.stats.flops })))
        }
        BackendArg::Native => {
            if !compiler_available() {
                return Err(Failure::Usage("native backend needs a C compiler (set CC)".into()));
            }
            let k = at_stage("compile C", NativeKernel::compile(p3))?;
            let r = at_stage("execute", k.run(&b, 0, 1, false))?;
            let out = inst.output_values(&r.outputs)?;
            Ok((out, json!({ "time_ns": r.times_ns.first() })))
        }
    }
}

fn cmd_run(a: &RunArgs) -> Outcome<()> {
    let script = schedule_text(a.schedule.as_ref())?;
    let inst = instance(&a.problem, a.problem.seed)?;
    let prep = at_stage("decompose", prepare(&inst, &a.format))?;
    let p3 = build(&prep, script.as_deref())?;
    let mode = if a.checked { Mode::Checked } else { Mode::Release };
    let (out, stats) = execute(&inst, &prep, &p3, a.backend, mode)?;
    let mut report = json!({
        "op": format!("{:?}", inst.spec.op),
        "format": a.format.to_string(),
        "rows": inst.spec.m,
        "cols": inst.spec.n,
        "nnz": inst.spec.nnz,
        "padding_ratio": prep.padding_ratio,
        "output_len": out.len(),
        "output_sum": out.iter().sum::<f64>(),
        "stats": stats,
    });
    if a.print_output {
        report["output"] = json!(out);
    }
    say(&format!("{}\n", serde_json::to_string_pretty(&report).expect("json")));
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Outcome<()> {
    let script = schedule_text(a.schedule.as_ref())?;
    for t in 0..a.trials {
        let seed = a.problem.seed.wrapping_add(t as u64);
        let inst = instance(&a.problem, seed)?;
        let prep = at_stage("decompose", prepare(&inst, &a.format))?;
        let mut p3 = build(&prep, script.as_deref())?;
        if a.inject_fault {
            p3 = inject_fault(&p3, inst.output_buffer());
        }
        let (got, _) = execute(&inst, &prep, &p3, a.backend, Mode::Checked)?;
        let want = inst.oracle()?;
        if let Err(m) = compare(&got, &want, inst.spec.dtype) {
            let width = if inst.spec.op == Op::SDDMM { inst.spec.n } else { want.values.len() / inst.spec.m.max(1) };
            let (row, col) = (m.index / width.max(1), m.index % width.max(1));
            return Err(Failure::Verify(format!(
                "FAIL {:?} {} trial {t} (seed {seed}): first mismatch at index {} (row {row}, col {col}): got {}, want {}",
                inst.spec.op, a.format, m.index, m.got, m.want
            )));
        }
    }
    say(&format!("PASS {:?} {} {} trial(s)\n", a.problem.op, a.format, a.trials));
    Ok(())
}

fn csv_row(fields: &[String]) -> String {
    fields.iter().map(|f| if f.contains(',') { format!("\"{f}\"") } else { f.clone() }).collect::<Vec<_>>().join(",")
}

fn cmd_bench(a: &BenchArgs) -> Outcome<()> {
    let inst = instance(&a.problem, a.problem.seed)?;
    let mut space = SearchSpace {
        formats: a.formats.0.clone(),
        splits: a.splits.clone(),
        parallel: if a.parallel { vec![false, true] } else { Vec::new() },
        rfactors: a.rfactors.clone(),
        ..Default::default()
    };
    if a.tune {
        space.c = a.c.clone();
        space.k_offsets = a.k_offsets.clone();
    }
    let mut opts = TrialOptions {
        warmup: a.warmup,
        repeats: a.repeats,
        flush_cache: a.flush_cache == OnOff::On,
        ..Default::default()
    };
    if let Some(b) = a.backend {
        opts.backend = match b {
            BackendArg::Interp => Backend::Interpreter,
            BackendArg::Native => Backend::Native,
        };
    }
    let report = match run_trials(&inst, &space, &opts) {
        Ok(r) => r,
        Err(e @ Error::Tune(_)) => return Err(Failure::Internal(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let mut j = report.to_json();
    j["op"] = json!(format!("{:?}", inst.spec.op));
    j["rows"] = json!(inst.spec.m);
    j["cols"] = json!(inst.spec.n);
    j["nnz"] = json!(inst.spec.nnz);
    j["warmup"] = json!(a.warmup);
    j["repeats"] = json!(a.repeats);
    j["flush_cache"] = json!(opts.flush_cache);
    if let Some(path) = &a.csv {
        let mut s = String::from("point,format,split,parallel,rfactor,median_ns,flops,loads,padding_ratio,load_balance,valid,best\n");
        let show = |v: Option<String>| v.unwrap_or_default();
        for (i, t) in report.trials.iter().enumerate() {
            let row = [
                t.point.id.to_string(),
                t.point.format.to_string(),
                show(t.point.split.map(|x| x.to_string())),
                t.point.parallel.to_string(),
                show(t.point.rfactor.map(|x| x.to_string())),
                show(t.median_ns.map(|x| format!("{x:.0}"))),
                show(t.stats.map(|s| s.flops.to_string())),
                show(t.stats.map(|s| s.loads.to_string())),
                show(t.padding_ratio.map(|x| format!("{x:.6}"))),
                show(t.load_balance.map(|x| format!("{x:.6}"))),
                t.valid.to_string(),
                (i == report.best).to_string(),
            ];
            s.push_str(&csv_row(&row));
            s.push('\n');
        }
        fs::write(path, s)?;
    }
    emit(a.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&j).expect("json")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Info { matrix } => cmd_info(matrix),
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Compile(a) => cmd_compile(a),
        Cmd::Decompose(a) => cmd_decompose(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify(m)) => {
            say(&format!("{m}\n"));
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_lists_keep_parameters_together() {
        let f = parse_formats("csr,hyb:c=2,k=2,ell,srbcrs:t=2,g=4").unwrap().0;
        assert_eq!(
            f,
            [
                FormatPath::Csr,
                FormatPath::Hyb { c: 2, k: Some(2) },
                FormatPath::Ell(None),
                FormatPath::SrBcrs { t: 2, g: 4 }
            ]
        );
        assert!(parse_formats("csr,bogus").is_err());
        assert!(parse_formats("").is_err());
    }
}
