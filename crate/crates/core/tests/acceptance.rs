//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance`; an extra argument filters the
//! criteria by name.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;

use sparsekit::exec::{compiler_available, interpret, Array, Bindings, Mode, NativeKernel};
use sparsekit::gen;
use sparsekit::ir::{parse, print, structural_equal};
use sparsekit::kernels::{compare, conv_to_rgms, direct_conv_oracle, prepare, ConvPattern, FormatPath, Instance, Op, Oracle};
use sparsekit::lower::{lower, lower_sparse_buffers, lower_sparse_iteration};
use sparsekit::schedule::reorder;
use sparsekit::storage::{
    build_csr, build_csr3, csr_to_bsr, csr_to_dbsr, csr_to_ell, csr_to_srbcrs, decompose_hyb, default_hyb_k,
    srbcrs_tile_nonzeros, CooMatrix, TensorStorage, ValueDType,
};
use sparsekit::transform::hyb_rules;
use sparsekit::tune::{median, run_points, run_trials, FormatChoice, SearchSpace, TrialOptions};

use common::{csr_program, flat_offsets, paths, random_coo, random_schedule, Kind};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- shapes

/// Random sparse kernel instance within the suite bounds: at most 64×64,
/// d ≤ 16, R ≤ 4.
fn random_instance(op: Op, dtype: ValueDType, seed: u64) -> Instance {
    let mut rng = gen::rng(seed);
    let m = rng.gen_range(1..=64);
    let n = rng.gen_range(1..=64);
    let d = rng.gen_range(1..=16);
    let d_out = rng.gen_range(1..=16);
    let r = rng.gen_range(1..=4);
    let density = rng.gen_range(0.0..0.3);
    Instance::random(op, m, n, d, d_out, r, density, dtype, seed).unwrap()
}

/// Sparse convolution over a 2D point cloud with a 2×2 kernel (four
/// relations), with its direct-convolution oracle.
fn conv_instance(dtype: ValueDType, seed: u64) -> (Instance, Oracle) {
    let mut rng = gen::rng(seed ^ 0xc0);
    let extent = rng.gen_range(2..=10);
    let n_in = rng.gen_range(1..=(extent * extent).min(64));
    let n_out = rng.gen_range(1..=(extent * extent).min(64));
    let ins = gen::pointcloud(n_in, extent, 2, rng.gen()).unwrap();
    let outs = gen::pointcloud(n_out, extent, 2, rng.gen()).unwrap();
    let pattern = ConvPattern::cube(2, 2);
    let (d_in, d_out) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
    let (a, _) = conv_to_rgms(&pattern, &ins, &outs, d_in, d_out, dtype).unwrap();
    let inst = Instance::from_rgms_storage(a, d_in, d_out, &mut rng).unwrap();
    let want = direct_conv_oracle(&pattern, &ins, &outs, &inst.dense["X"], &inst.dense["W"], d_in, d_out).unwrap();
    (inst, want)
}

// ---------------------------------------------------------------- 1

fn oracle_suite() -> Outcome {
    let kernels = ["spmm", "sddmm", "rgms", "conv"];
    let mut count = 0;
    for (ki, kernel) in kernels.iter().enumerate() {
        for (fi, path) in paths().iter().enumerate() {
            for dtype in [ValueDType::I32, ValueDType::F32] {
                for t in 0..100u64 {
                    let seed = (ki as u64) << 40 | (fi as u64) << 32 | (dtype as u64) << 24 | t;
                    let (inst, want) = match *kernel {
                        "conv" => conv_instance(dtype, seed),
                        k => {
                            let inst = random_instance(k.parse().unwrap(), dtype, seed);
                            let want = inst.oracle().unwrap();
                            (inst, want)
                        }
                    };
                    let pre = t % 2 == 1;
                    let ctx = || format!("{kernel} {path} {} seed {seed}", dtype.keyword());
                    let prep = prepare(&inst, path).map_err(|e| format!("{}: {e}", ctx()))?;
                    let (got, _) = prep.run(&inst, pre, None, Mode::Checked).map_err(|e| format!("{}: {e}", ctx()))?;
                    compare(&got, &want, dtype).map_err(|m| format!("{}: {m}", ctx()))?;
                    count += 1;
                }
            }
        }
    }
    Ok(format!("{count} instances (4 kernels x 8 formats x 2 dtypes x 100) match the dense oracle"))
}

// ---------------------------------------------------------------- 2

fn storages_for(format: &str, rng: &mut impl Rng) -> Vec<TensorStorage> {
    let csr = build_csr(&random_coo(rng, 64)).unwrap();
    match format {
        "csr" => vec![csr],
        "bsr" => vec![csr_to_bsr(&csr, rng.gen_range(1..=4)).unwrap()],
        "ell" => {
            let w = csr.aux["J_indptr"].windows(2).map(|w| (w[1] - w[0]) as usize).max().unwrap_or(0).max(1);
            vec![csr_to_ell(&csr, w + rng.gen_range(0..3)).unwrap()]
        }
        "dbsr" => vec![csr_to_dbsr(&csr, rng.gen_range(1..=4)).unwrap()],
        "srbcrs" => vec![csr_to_srbcrs(&csr, [2, 4, 8][rng.gen_range(0..3)], rng.gen_range(1..=4)).unwrap()],
        "hyb" => {
            let k = rng.gen_range(0..=4);
            decompose_hyb(&csr, [1, 2, 4][rng.gen_range(0..3)], k).unwrap().parts.into_iter().map(|p| p.storage).collect()
        }
        "csr3" => {
            let rels: Vec<CooMatrix> = (0..rng.gen_range(1..=4)).map(|_| random_coo(rng, 32)).collect();
            let (m, n) = (rels[0].rows, rels[0].cols);
            let rels: Vec<CooMatrix> =
                rels.into_iter().map(|r| CooMatrix::new(m, n, r.triplets.into_iter().filter(|t| t.0 < m && t.1 < n).collect()).unwrap()).collect();
            vec![build_csr3(&rels).unwrap()]
        }
        _ => unreachable!(),
    }
}

fn flattening() -> Outcome {
    let mut rng = gen::rng(2);
    let mut summary = Vec::new();
    for format in ["csr", "bsr", "ell", "dbsr", "srbcrs", "hyb", "csr3"] {
        let mut probes = 0;
        while probes < 10_000 {
            for s in storages_for(format, &mut rng) {
                let entries = s.entries().unwrap();
                if entries.is_empty() {
                    continue;
                }
                let picks: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..entries.len())).collect();
                let pos: Vec<Vec<usize>> = picks.iter().map(|&i| entries[i].positions.clone()).collect();
                let got = flat_offsets(&s, &pos);
                for (&i, &g) in picks.iter().zip(&got) {
                    ensure(g == entries[i].flat as i64, || {
                        format!("{format}: positions {:?} flatten to {g}, walk says {}", entries[i].positions, entries[i].flat)
                    })?;
                }
                probes += picks.len();
            }
        }
        summary.push(format!("{format} {probes}"));
    }
    Ok(format!("probes per format: {}", summary.join(", ")))
}

// ---------------------------------------------------------------- 3

fn translation() -> Outcome {
    // the row {1, 3, 9, 10}: coordinate 9 sits at position 2
    let src = csr_program(1, 16, 4, "    sp_iter s compute [i: I S] {\n      Y[i] = A[i, 9];\n    }\n", "  buffer Y i32 dense [1];\n");
    let b = Bindings::default()
        .with_buffer("J_indptr", Array::I32(vec![0, 4]))
        .with_buffer("J_indices", Array::I32(vec![1, 3, 9, 10]))
        .with_buffer("A", Array::I32(vec![0, 1, 2, 3]));
    let r = interpret(&lower(&parse(&src).unwrap()).unwrap(), b, Mode::Checked).map_err(|e| e.to_string())?;
    let y = r.outputs.get("Y").unwrap().to_f64();
    ensure(y == [2.0], || format!("worked example gave position {y:?}, want 2"))?;

    let mut rng = gen::rng(3);
    let mut coords = 0;
    for t in 0..100 {
        let coo = random_coo(&mut rng, 48);
        let csr = build_csr(&coo).unwrap();
        let (m, n) = (coo.rows, coo.cols);
        let body = "    sp_iter find compute [i: I S, k: K S] {\n      F[i, k] = A[i, k];\n    }\n    sp_iter coords compute [i: I S, j: J S] {\n      C[i, j] = A[i, j];\n    }\n";
        let bufs = format!("  buffer F i32 dense [{m}, {n}];\n  buffer C i32 dense [{m}, {n}];\n");
        let p = parse(&csr_program(m, n, csr.values.len(), body, &bufs)).map_err(|e| e.to_string())?;
        // A holds 1 + the position of each entry within its row
        let entries = csr.entries().unwrap();
        let vals: Vec<i32> = entries.iter().map(|e| e.positions[1] as i32 + 1).collect();
        let b = Bindings::default()
            .with_buffer("J_indptr", Array::I32(csr.aux["J_indptr"].clone()))
            .with_buffer("J_indices", Array::I32(csr.aux["J_indices"].clone()))
            .with_buffer("A", Array::I32(vals));
        let r = interpret(&lower(&p).map_err(|e| e.to_string())?, b, Mode::Checked).map_err(|e| e.to_string())?;
        ensure(r.violations.is_empty(), || format!("matrix {t}: {:?}", r.violations))?;
        let f = r.outputs.get("F").unwrap().to_f64();
        let c = r.outputs.get("C").unwrap().to_f64();
        let mut want = vec![0.0; m * n];
        for e in &entries {
            want[e.coords[0] * n + e.coords[1]] = e.positions[1] as f64 + 1.0;
        }
        ensure(c == want, || format!("matrix {t}: position -> coordinate disagrees with the walk"))?;
        ensure(f == want, || format!("matrix {t}: coordinate -> position does not invert it"))?;
        coords += entries.len();
    }
    Ok(format!("worked example ok; {coords} stored coordinates round-trip over 100 CSR matrices"))
}

// ---------------------------------------------------------------- 4

fn hyb_structure() -> Outcome {
    let mut rng = gen::rng(4);
    let mut worst: f64 = 0.0;
    for t in 0..1000 {
        let coo = if t % 4 == 0 {
            {
            let n = rng.gen_range(1..=64);
            gen::powerlaw(n, rng.gen_range(0.0..8.0f64).min(n as f64), rng.gen_range(0.5..2.0), rng.gen()).unwrap()
        }
        } else {
            random_coo(&mut rng, 64)
        };
        let csr = build_csr(&coo).unwrap();
        let c = [1, 2, 4][rng.gen_range(0..3)];
        let k = if t % 2 == 0 { default_hyb_k(coo.nnz(), coo.rows) } else { rng.gen_range(0..=5) };
        let h = decompose_hyb(&csr, c, k).map_err(|e| e.to_string())?;
        let slots: usize = h.parts.iter().map(|p| p.storage.values.len()).sum();
        let pad = if slots == 0 { 0.0 } else { (slots - coo.nnz()) as f64 / slots as f64 };
        ensure((pad - h.padding_ratio()).abs() < 1e-12, || format!("matrix {t}: padding_ratio {} vs {pad}", h.padding_ratio()))?;
        ensure(pad < 0.5, || format!("matrix {t}: padding ratio {pad} (c={c}, k={k})"))?;
        worst = worst.max(pad);
        for p in &h.parts {
            let w = 1usize << p.bucket;
            ensure(p.width == w && p.storage.axes[1].nnz_cols == Some(w) && p.storage.values.len() == p.rows() * w, || {
                format!("matrix {t}: bucket {} has width {} (axis {:?})", p.bucket, p.width, p.storage.axes[1].nnz_cols)
            })?;
        }
        ensure(h.reconstruct().map_err(|e| e.to_string())? == coo.to_dense(), || format!("matrix {t}: reconstruction differs"))?;
    }
    let coo = gen::random(32, 32, 0.3, 5).unwrap();
    let rules = hyb_rules(&decompose_hyb(&build_csr(&coo).unwrap(), 2, 2).unwrap(), "A", &["I", "J"], None, "").unwrap();
    ensure(rules.len() == 6, || format!("hyb(2,2) produced {} rules", rules.len()))?;
    Ok(format!("1000 matrices, max padding ratio {worst:.3}; widths 2^i; exact reconstruction; hyb(2,2) has 6 rules"))
}

// ---------------------------------------------------------------- 5

fn srbcrs_density() -> Outcome {
    let mut rng = gen::rng(5);
    let mut tiles = 0;
    for t in 0..100 {
        let mut coo = random_coo(&mut rng, 64);
        for x in &mut coo.triplets {
            x.2 = 1.0;
        }
        let csr = build_csr(&coo).unwrap();
        for tile in [2, 4, 8] {
            let g = rng.gen_range(1..=4);
            let s = csr_to_srbcrs(&csr, tile, g).map_err(|e| e.to_string())?;
            let nz = srbcrs_tile_nonzeros(&s).map_err(|e| e.to_string())?;
            let occupied: BTreeSet<(usize, usize)> = coo.triplets.iter().map(|&(r, c, _)| (r / tile, c)).collect();
            ensure(nz.len() == occupied.len(), || format!("matrix {t}, t={tile}: {} real tiles, {} occupied", nz.len(), occupied.len()))?;
            if let Some(&min) = nz.iter().min() {
                ensure(min as f64 / tile as f64 >= 1.0 / tile as f64, || format!("matrix {t}, t={tile}: a tile holds {min} non-zeros"))?;
            }
            tiles += nz.len();
        }
    }
    Ok(format!("{tiles} stored tiles over 100 matrices x t in {{2,4,8}} all have density >= 1/t"))
}

// ---------------------------------------------------------------- 6

fn schedule_preservation() -> Outcome {
    let mut rng = gen::rng(6);
    let mut kinds: BTreeMap<Kind, usize> = BTreeMap::new();
    let mut rejected_across = 0;
    for op in [Op::SpMM, Op::SDDMM, Op::RGMS] {
        for t in 0..50u64 {
            let inst = random_instance(op, ValueDType::I32, 6000 + t);
            let path = &paths()[rng.gen_range(0..8)];
            let pre = rng.gen_bool(0.5);
            let prep = prepare(&inst, path).map_err(|e| e.to_string())?;
            let p2 = lower_sparse_iteration(&prep.stage1(pre)).map_err(|e| e.to_string())?;
            let len = rng.gen_range(1..=6);
            let (s, applied) = random_schedule(&p2, &mut rng, len);
            let script: Vec<&str> = applied.iter().map(|(_, w)| w.as_str()).collect();
            let ctx = || format!("{op:?} {path} seed {}: [{}]", 6000 + t, script.join("; "));
            let p3 = lower_sparse_buffers(&s).map_err(|e| format!("{}: {e}", ctx()))?;
            let r = interpret(&p3, prep.bindings(&inst, pre), Mode::Checked).map_err(|e| format!("{}: {e}", ctx()))?;
            ensure(r.violations.is_empty(), || format!("{}: {:?}", ctx(), r.violations))?;
            let got = inst.output_values(&r.outputs).map_err(|e| e.to_string())?;
            compare(&got, &inst.oracle().unwrap(), ValueDType::I32).map_err(|m| format!("{}: {m}", ctx()))?;
            for (k, _) in &applied {
                *kinds.entry(*k).or_default() += 1;
            }
            for prog in [&p2, &s] {
                for (outer, inner) in common::loops(prog).across {
                    for order in [[inner.clone(), outer.clone()], [outer.clone(), inner.clone()]] {
                        ensure(reorder(prog, &order).is_err(), || format!("{}: reorder {} {} crossed a block", ctx(), order[0], order[1]))?;
                        rejected_across += 1;
                    }
                }
            }
        }
    }
    let all = [Kind::Split, Kind::Reorder, Kind::Fuse, Kind::Parallel, Kind::Rfactor, Kind::CacheRead, Kind::CacheWrite];
    let missing: Vec<_> = all.iter().filter(|k| !kinds.contains_key(k)).collect();
    ensure(missing.is_empty(), || format!("primitives never applied: {missing:?}"))?;
    ensure(rejected_across > 0, || "no cross-block reorder was attempted".into())?;
    Ok(format!("150 scheduled programs exact; applied {kinds:?}; {rejected_across} cross-block reorders rejected"))
}

// ---------------------------------------------------------------- 7

fn c_differential() -> Outcome {
    if !compiler_available() {
        return Err("no C compiler available (set CC)".into());
    }
    let mut rng = gen::rng(7);
    let mut runs = 0;
    for op in [Op::SpMM, Op::SDDMM, Op::RGMS] {
        for (fi, path) in paths().iter().enumerate() {
            for t in 0..3u64 {
                let inst = random_instance(op, ValueDType::I32, 7000 + fi as u64 * 10 + t);
                let pre = t == 1;
                let prep = prepare(&inst, path).map_err(|e| e.to_string())?;
                let p2 = lower_sparse_iteration(&prep.stage1(pre)).map_err(|e| e.to_string())?;
                let p2 = if t == 2 { random_schedule(&p2, &mut rng, 4).0 } else { p2 };
                let p3 = lower_sparse_buffers(&p2).map_err(|e| e.to_string())?;
                let b = prep.bindings(&inst, pre);
                let want = interpret(&p3, b.clone(), Mode::Release).map_err(|e| e.to_string())?.outputs;
                let k = NativeKernel::compile(&p3).map_err(|e| e.to_string())?;
                let got = k.run(&b, 0, 1, false).map_err(|e| e.to_string())?.outputs;
                for (name, arr) in &got.buffers {
                    ensure(want.buffers.get(name) == Some(arr), || format!("{op:?} {path} case {t}: `{name}` differs"))?;
                }
                ensure(got.buffers.contains_key(inst.output_buffer()), || format!("{op:?} {path}: no output"))?;
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} i32 programs (3 ops x 8 formats, plain/preconverted/scheduled) bit-identical"))
}

// ---------------------------------------------------------------- 8

fn ir_round_trip() -> Outcome {
    let mut rng = gen::rng(8);
    let mut stages = [0; 3];
    for t in 0..100u64 {
        let op = [Op::SpMM, Op::SDDMM, Op::RGMS][t as usize % 3];
        let path = &paths()[rng.gen_range(0..8)];
        let dtype = [ValueDType::I32, ValueDType::F32, ValueDType::F64][rng.gen_range(0..3)];
        let inst = random_instance(op, dtype, 8000 + t);
        let prep = prepare(&inst, path).map_err(|e| e.to_string())?;
        let p1 = prep.stage1(rng.gen_bool(0.5));
        let stage = (t / 3 % 3) as usize;
        let p = match stage {
            0 => p1,
            _ => {
                let p2 = lower_sparse_iteration(&p1).map_err(|e| e.to_string())?;
                let p2 = random_schedule(&p2, &mut rng, 3).0;
                if stage == 1 {
                    p2
                } else {
                    lower_sparse_buffers(&p2).map_err(|e| e.to_string())?
                }
            }
        };
        stages[stage] += 1;
        let text = print(&p);
        let q = parse(&text).map_err(|e| {
            let line = match &e {
                sparsekit::Error::Parse { line, .. } => text.lines().nth(line - 1).unwrap_or("").trim().to_string(),
                _ => String::new(),
            };
            format!("program {t} ({op:?} {path}, stage {}): {e} in `{line}`", p.stage)
        })?;
        ensure(structural_equal(&q, &p), || format!("program {t}: parse(print(p)) differs structurally"))?;
        ensure(print(&q) == text, || format!("program {t}: printing is not stable"))?;
    }
    Ok(format!("100 programs (stage I/II/III: {}/{}/{}) round-trip", stages[0], stages[1], stages[2]))
}

// ---------------------------------------------------------------- 9

/// Tunes SpMM on the power-law graph, then re-times the untuned CSR point
/// and the best hyb point in interleaved rounds so drift in machine load
/// hits both alike. The verdict uses the paired medians.
fn tuner_sanity() -> Outcome {
    let coo = gen::powerlaw(4096, 16.0, 1.0, 9).unwrap();
    let inst = Instance::from_matrix(Op::SpMM, &coo, 16, ValueDType::F32, 9).map_err(|e| e.to_string())?;
    let space = SearchSpace { formats: vec![FormatPath::Csr], k_offsets: vec![-2, -1, 0], ..SearchSpace::hyb_grid() };
    let opts = TrialOptions::default();
    let report = run_trials(&inst, &space, &opts).map_err(|e| e.to_string())?;
    let csr = report.trials.iter().find(|t| t.point.format == FormatChoice::Path(FormatPath::Csr)).unwrap();
    let best_hyb = report
        .trials
        .iter()
        .filter(|t| t.valid && matches!(t.point.format, FormatChoice::Hyb { .. }))
        .min_by(|a, b| a.median_ns.unwrap().total_cmp(&b.median_ns.unwrap()))
        .ok_or("no valid hyb point")?;
    let lb = best_hyb.load_balance.ok_or("no load balance for hyb")?;
    let quiet = TrialOptions { count_ops: false, ..opts };
    let (mut csr_ns, mut hyb_ns) = (Vec::new(), Vec::new());
    for round in 0..7 {
        let pair = if round % 2 == 0 {
            [csr.point.clone(), best_hyb.point.clone()]
        } else {
            [best_hyb.point.clone(), csr.point.clone()]
        };
        let r = run_points(&inst, &pair, &quiet).map_err(|e| e.to_string())?;
        for t in &r.trials {
            let ns = t.median_ns.ok_or("re-timing failed")?;
            if t.point == csr.point { csr_ns.push(ns) } else { hyb_ns.push(ns) }
        }
    }
    let (c, h) = (median(&csr_ns), median(&hyb_ns));
    let detail = format!(
        "backend {:?}, nnz {}; best hyb {} balance {lb:.3} (csr {:.1}); tuner medians hyb {:.0} ns / csr {:.0} ns; \
         paired medians over 7 rounds hyb {h:.0} ns / csr {c:.0} ns",
        report.backend,
        coo.nnz(),
        best_hyb.point.format,
        csr.load_balance.unwrap_or(f64::NAN),
        best_hyb.median_ns.unwrap(),
        csr.median_ns.unwrap_or(f64::NAN),
    );
    ensure(lb <= 2.0, || format!("load balance above 2: {detail}"))?;
    ensure(h <= c, || format!("best hyb slower than CSR: {detail}"))?;
    Ok(detail)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 oracle equivalence", oracle_suite),
        ("2 flattening", flattening),
        ("3 coordinate translation", translation),
        ("4 hyb structure", hyb_structure),
        ("5 sr-bcrs density", srbcrs_density),
        ("6 schedule preservation", schedule_preservation),
        ("7 interpreter vs C", c_differential),
        ("8 IR round trip", ir_round_trip),
        ("9 tuner sanity", tuner_sanity),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let start = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS [{name}] {detail} ({secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{name}] {why} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
