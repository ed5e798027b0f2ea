use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsekit")).args(args).output().expect("spawn sparsekit")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen_to(dir: &Path, name: &str, args: &[&str]) -> String {
    let path = dir.join(name).to_string_lossy().into_owned();
    let mut all = vec!["gen"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["-o", &path]);
    let o = sk(&all);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    path
}

#[test]
fn compile_csr_stage_three_names_aux_buffers() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen_to(dir.path(), "m.mtx", &["random", "--n", "12", "--density", "0.3", "--seed", "1"]);
    let o = sk(&["compile", "--op", "spmm", "--format", "csr", "--emit", "ir3", "--matrix", &m, "--d", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("J_indptr") && text.contains("stage III"), "{text}");
}

#[test]
fn every_emit_stage_is_available() {
    for (emit, marker) in [("ir1", "stage I "), ("ir2", "stage II "), ("ir3", "stage III"), ("c", "#include")] {
        let o = sk(&["compile", "--op", "sddmm", "--format", "bsr:b=2", "--emit", emit, "--d", "4", "--rows", "8", "--cols", "8"]);
        assert_eq!(o.status.code(), Some(0), "{emit}");
        assert!(stdout(&o).contains(marker), "{emit}: {}", stdout(&o));
    }
}

#[test]
fn hyb_two_by_three_has_six_compute_nests() {
    let o = sk(&["compile", "--format", "hyb:c=2,k=2", "--emit", "ir3", "--preconverted", "--d", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let nests = text
        .lines()
        .filter(|l| {
            let l = l.trim();
            l.starts_with("block spmm_hyb_p") && l.ends_with("_0 {")
        })
        .count();
    assert_eq!(nests, 6, "{text}");
    let o = sk(&["decompose", "--rules", "hyb:c=2,k=2", "--d", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("6 compute iteration"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(sk(&["compile", "--format", "bogus"]).status.code(), Some(2));
    assert_eq!(sk(&["compile", "--format", "bsr:b=0"]).status.code(), Some(2));
    assert_eq!(sk(&["compile", "--op", "gemm"]).status.code(), Some(2));
    assert_eq!(sk(&["gen", "banded", "--n", "4", "--band", "4"]).status.code(), Some(2));
    assert_eq!(sk(&["info", "/nonexistent/m.mtx"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.txt");
    fs::write(&s, "split spmm.k\n").unwrap();
    let o = sk(&["compile", "--schedule", s.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_schedule_is_an_internal_pass_error() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.txt");
    fs::write(&s, "split spmm.nope 2\n").unwrap();
    let o = sk(&["compile", "--d", "4", "--schedule", s.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schedule"));
}

#[test]
fn generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_to(dir.path(), "a.mtx", &["powerlaw", "--n", "100", "--seed", "9"]);
    let b = gen_to(dir.path(), "b.mtx", &["powerlaw", "--n", "100", "--seed", "9"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = gen_to(dir.path(), "c.mtx", &["powerlaw", "--n", "100", "--seed", "10"]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let p = sk(&["gen", "pointcloud", "--n", "20", "--extent", "8", "--dims", "3", "--seed", "2"]);
    assert_eq!(stdout(&p).lines().count(), 20);
    assert_eq!(stdout(&p), stdout(&sk(&["gen", "pointcloud", "--n", "20", "--extent", "8", "--dims", "3", "--seed", "2"])));
}

#[test]
fn banded_interior_rows_hold_five() {
    let o = sk(&["gen", "banded", "--n", "16", "--band", "2"]);
    let text = stdout(&o);
    let mut per_row = [0usize; 16];
    for l in text.lines().filter(|l| !l.starts_with('%')).skip(1) {
        let r: usize = l.split_whitespace().next().unwrap().parse().unwrap();
        per_row[r - 1] += 1;
    }
    assert!(per_row[2..14].iter().all(|&n| n == 5), "{per_row:?}");
    assert_eq!(per_row[0], 3);
    let e = stdout(&sk(&["gen", "random", "--n", "8", "--density", "0"]));
    assert!(e.lines().any(|l| l == "8 8 0"), "{e}");
}

#[test]
fn verify_passes_and_reports_faults() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen_to(dir.path(), "g.mtx", &["powerlaw", "--n", "128", "--avg-degree", "6", "--seed", "4"]);
    for f in ["csr", "hyb:c=2"] {
        let o = sk(&["verify", "--op", "spmm", "--format", f, "--matrix", &m, "--trials", "2", "--d", "8"]);
        assert_eq!(o.status.code(), Some(0), "{f}: {}", stdout(&o));
        assert!(stdout(&o).starts_with("PASS"));
    }
    let o = sk(&["verify", "--op", "spmm", "--format", "csr", "--matrix", &m, "--d", "8", "--dtype", "i32", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("first mismatch at index 0"), "{}", stdout(&o));
}

#[test]
fn bench_reports_each_format_and_a_best() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen_to(dir.path(), "g.mtx", &["powerlaw", "--n", "128", "--avg-degree", "6", "--seed", "4"]);
    let csv = dir.path().join("t.csv");
    let o = sk(&[
        "bench", "--formats", "csr,hyb:c=2,k=2", "--matrix", &m, "--d", "8", "--warmup", "1", "--repeats", "3",
        "--flush-cache", "off", "--backend", "interp", "--csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let j: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let trials = j["trials"].as_array().unwrap();
    assert_eq!(trials.len(), 2);
    assert_eq!(trials.iter().filter(|t| t["best"] == true).count(), 1);
    assert_eq!(trials[0]["padding_ratio"], 0.0);
    assert!(trials[1]["padding_ratio"].as_f64().unwrap() > 0.0);
    assert!(trials.iter().all(|t| t["valid"] == true && t["median_ns"].is_number()));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 3);
}
