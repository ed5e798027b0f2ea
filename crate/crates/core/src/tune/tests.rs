use super::*;
use crate::gen;
use crate::storage::{build_csr, ValueDType};

fn quick() -> TrialOptions {
    TrialOptions { warmup: 1, repeats: 3, ..Default::default() }
}

#[test]
fn enumeration_counts() {
    assert_eq!(enumerate(&SearchSpace::hyb_grid()).len(), 5);
    let empty = enumerate(&SearchSpace::default());
    assert_eq!(empty.len(), 1);
    assert_eq!(empty[0].format, FormatChoice::Path(FormatPath::Csr));
    let s = SearchSpace { k_offsets: vec![-1, 0, 1], ..SearchSpace::hyb_grid() };
    let pts = enumerate(&s);
    assert_eq!(pts.len(), 15);
    assert!(pts.iter().enumerate().all(|(i, p)| p.id == i));
    assert_eq!(pts, enumerate(&s));
    let s = SearchSpace { splits: vec![2, 4], parallel: vec![false, true], ..SearchSpace::hyb_grid() };
    assert_eq!(enumerate(&s).len(), 20);
}

#[test]
fn single_point_is_best() {
    let inst = Instance::random(Op::SpMM, 12, 12, 4, 0, 1, 0.3, ValueDType::I32, 2).unwrap();
    let r = run_trials(&inst, &SearchSpace::default(), &quick()).unwrap();
    assert_eq!(r.trials.len(), 1);
    assert_eq!(r.best, 0);
    assert!(r.best().valid && r.best().checked && r.best().stats.unwrap().flops > 0);
}

#[test]
fn wrong_point_never_best() {
    let inst = Instance::random(Op::SpMM, 12, 12, 4, 0, 1, 0.3, ValueDType::F32, 2).unwrap();
    let space = SearchSpace { formats: vec![FormatPath::Csr, FormatPath::Ell(None)], ..Default::default() };
    for fault in [0, 1] {
        let r = run_trials(&inst, &space, &TrialOptions { fault: Some(fault), ..quick() }).unwrap();
        assert!(!r.trials[fault].valid && r.trials[fault].checked);
        assert!(r.trials[fault].error.as_ref().unwrap().contains("wrong result"));
        assert_eq!(r.best, 1 - fault);
        let j = r.to_json();
        assert_eq!(j["trials"][1 - fault]["best"], true);
        assert_eq!(j["trials"][fault]["valid"], false);
    }
    let all_bad = SearchSpace::default();
    assert!(matches!(run_trials(&inst, &all_bad, &TrialOptions { fault: Some(0), ..quick() }), Err(Error::Tune(_))));
}

#[test]
fn schedule_points_stay_correct() {
    for (op, space) in [
        (Op::SpMM, SearchSpace { splits: vec![2, 3], parallel: vec![false, true], ..SearchSpace::hyb_grid() }),
        (Op::SDDMM, SearchSpace { formats: vec![FormatPath::Csr], rfactors: vec![2], parallel: vec![true], ..Default::default() }),
        (Op::RGMS, SearchSpace { c: vec![1, 2], splits: vec![2], ..Default::default() }),
    ] {
        let inst = Instance::random(op, 10, 9, 4, 3, 2, 0.3, ValueDType::I32, 9).unwrap();
        let r = run_trials(&inst, &space, &TrialOptions { backend: Backend::Interpreter, ..quick() }).unwrap();
        for t in &r.trials {
            assert!(t.valid, "{op:?} {:?}: {:?}", t.point, t.error);
        }
    }
}

#[test]
fn negative_k_is_recorded_invalid() {
    let inst = Instance::random(Op::SpMM, 8, 8, 2, 0, 1, 0.1, ValueDType::I32, 4).unwrap();
    let space = SearchSpace { c: vec![1], k_offsets: vec![-5, 0], ..Default::default() };
    let r = run_trials(&inst, &space, &quick()).unwrap();
    assert!(!r.trials[0].valid && !r.trials[0].checked);
    assert_eq!(r.best, 1);
}

#[test]
fn hyb_buckets_balance_power_law_rows() {
    let coo = gen::powerlaw(512, 8.0, 1.0, 3).unwrap();
    let csr = build_csr(&coo).unwrap();
    assert!(csr_balance(&csr).unwrap() > 4.0);
    for c in [1, 2, 4, 8, 16] {
        let k = default_hyb_k(csr.values.len(), 512);
        let b = hyb_balance(&crate::storage::decompose_hyb(&csr, c, k).unwrap()).unwrap();
        assert!(b <= 2.0, "c={c}: {b}");
    }
}

#[test]
fn median_of_even_and_odd() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
}
