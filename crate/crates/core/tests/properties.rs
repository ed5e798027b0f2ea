mod common;

use proptest::prelude::*;

use sparsekit::axes::{anc, Axis};
use sparsekit::exec::{interpret, Array, Bindings, Mode};
use sparsekit::gen;
use sparsekit::ir::parse;
use sparsekit::kernels::{compare, prepare, Instance, Op};
use sparsekit::lower::{lower, lower_sparse_buffers, lower_sparse_iteration};
use sparsekit::storage::mtx::{parse_mtx, write_mtx};
use sparsekit::storage::{
    build_csr, csr_to_bsr, csr_to_coo, csr_to_dbsr, csr_to_ell, csr_to_srbcrs, decompose_hyb, reconstruct_dense,
    CooMatrix, ValueDType,
};

use common::{csr_program, flat_offsets, paths, random_schedule};

/// Matrix with small integer values from a dense pattern.
fn matrix() -> impl Strategy<Value = CooMatrix> {
    (1usize..20, 1usize..20).prop_flat_map(|(r, c)| {
        prop::collection::vec(prop_oneof![3 => Just(0i32), 1 => -5i32..6], r * c).prop_map(move |v| {
            let data: Vec<f64> = v.into_iter().map(f64::from).collect();
            CooMatrix::from_dense(r, c, &data)
        })
    })
}

/// Axes forming a forest: each axis picks an earlier one as parent or none.
fn forest() -> impl Strategy<Value = Vec<Option<usize>>> {
    (1usize..12).prop_flat_map(|n| {
        (0..n)
            .map(|i| if i == 0 { Just(None).boxed() } else { prop::option::of(0..i).boxed() })
            .collect::<Vec<_>>()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn anc_is_a_root_to_self_chain(parents in forest()) {
        let axes: Vec<Axis> = parents
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut a = Axis::dense_fixed(&format!("A{i}"), 4);
                a.parent = p.map(|p| format!("A{p}"));
                a
            })
            .collect();
        for i in 0..axes.len() {
            let path = anc(&axes, i).unwrap();
            prop_assert_eq!(*path.last().unwrap(), i);
            prop_assert!(axes[path[0]].parent.is_none());
            for w in path.windows(2) {
                prop_assert_eq!(axes[w[1]].parent.as_deref(), Some(axes[w[0]].name.as_str()));
            }
            let mut seen = path.clone();
            seen.dedup();
            prop_assert_eq!(seen.len(), path.len());
        }
    }

    #[test]
    fn storage_conversions_reconstruct(m in matrix(), b in 1usize..5, t in 1usize..5, g in 1usize..4, c in 1usize..5, k in 0usize..4) {
        let dense = m.to_dense();
        let csr = build_csr(&m).unwrap();
        csr.check_invariants().unwrap();
        let mut back = csr_to_coo(&csr).unwrap().triplets;
        let mut orig = m.triplets.clone();
        back.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        orig.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        prop_assert_eq!(back, orig);
        let width = csr.aux["J_indptr"].windows(2).map(|w| (w[1] - w[0]) as usize).max().unwrap_or(0).max(1);
        for s in [
            csr_to_bsr(&csr, b).unwrap(),
            csr_to_dbsr(&csr, b).unwrap(),
            csr_to_ell(&csr, width).unwrap(),
            csr_to_srbcrs(&csr, t, g).unwrap(),
        ] {
            s.check_invariants().unwrap();
            let d = reconstruct_dense(&s).unwrap();
            prop_assert!(d.rows >= m.rows && d.cols >= m.cols);
            for r in 0..d.rows {
                for c in 0..d.cols {
                    let want = if r < m.rows && c < m.cols { dense.get(r, c) } else { 0.0 };
                    prop_assert_eq!(d.get(r, c), want, "({}, {}) of {:?}", r, c, s.kind);
                }
            }
        }
        prop_assert_eq!(decompose_hyb(&csr, c, k).unwrap().reconstruct().unwrap(), dense);
    }

    #[test]
    fn matrix_market_round_trips(m in matrix()) {
        let back = parse_mtx(&write_mtx(&m)).unwrap();
        prop_assert_eq!(back.to_dense(), m.to_dense());
    }

    #[test]
    fn flattening_matches_the_walk(m in matrix(), b in 1usize..4) {
        let csr = build_csr(&m).unwrap();
        for s in [csr.clone(), csr_to_bsr(&csr, b).unwrap(), csr_to_dbsr(&csr, b).unwrap()] {
            let entries = s.entries().unwrap();
            if entries.is_empty() {
                continue;
            }
            let pos: Vec<Vec<usize>> = entries.iter().map(|e| e.positions.clone()).collect();
            let got = flat_offsets(&s, &pos);
            let want: Vec<i64> = entries.iter().map(|e| e.flat as i64).collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn coordinate_search_inverts_indices(m in matrix()) {
        let csr = build_csr(&m).unwrap();
        let (r, c) = (m.rows, m.cols);
        let body = "    sp_iter find compute [i: I S, k: K S] {\n      F[i, k] = A[i, k];\n    }\n";
        let bufs = format!("  buffer F i32 dense [{r}, {c}];\n");
        let p = lower(&parse(&csr_program(r, c, csr.values.len(), body, &bufs)).unwrap()).unwrap();
        let entries = csr.entries().unwrap();
        let b = Bindings::default()
            .with_buffer("J_indptr", Array::I32(csr.aux["J_indptr"].clone()))
            .with_buffer("J_indices", Array::I32(csr.aux["J_indices"].clone()))
            .with_buffer("A", Array::I32(entries.iter().map(|e| e.positions[1] as i32 + 1).collect()));
        let out = interpret(&p, b, Mode::Checked).unwrap();
        let f = out.outputs.get("F").unwrap().to_f64();
        for e in &entries {
            prop_assert_eq!(f[e.coords[0] * c + e.coords[1]], e.positions[1] as f64 + 1.0);
        }
        prop_assert_eq!(f.iter().filter(|&&x| x != 0.0).count(), entries.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn schedules_preserve_integer_results(seed in any::<u64>(), op in 0usize..3, path in 0usize..8, len in 1usize..=6) {
        let op = [Op::SpMM, Op::SDDMM, Op::RGMS][op];
        let mut rng = gen::rng(seed);
        let inst = Instance::random(op, 9, 7, 4, 3, 2, 0.35, ValueDType::I32, seed).unwrap();
        let prep = prepare(&inst, &paths()[path]).unwrap();
        let p2 = lower_sparse_iteration(&prep.stage1(false)).unwrap();
        let (s, applied) = random_schedule(&p2, &mut rng, len);
        let p3 = lower_sparse_buffers(&s).unwrap();
        let r = interpret(&p3, prep.bindings(&inst, false), Mode::Checked).unwrap();
        prop_assert!(r.violations.is_empty(), "{:?}", r.violations);
        let got = inst.output_values(&r.outputs).unwrap();
        prop_assert!(compare(&got, &inst.oracle().unwrap(), ValueDType::I32).is_ok(), "{:?}", applied);
    }
}
