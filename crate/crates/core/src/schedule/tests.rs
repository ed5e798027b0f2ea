use super::*;
use crate::exec::{interpret, Array, Bindings, Mode};
use crate::ir::{print, Binding, Block, BufferDecl, IterKind};
use crate::kernels::{compare, prepare, Instance, Op};
use crate::storage::ValueDType;

fn lref(s: &str) -> LoopRef {
    s.parse().unwrap()
}

fn check(op: Op, d: usize, path: &str, script: &str) -> Program {
    let inst = Instance::random(op, 7, 6, d, 2, 2, 0.4, ValueDType::I32, 3).unwrap();
    let prep = prepare(&inst, &path.parse().unwrap()).unwrap();
    let f = |p: &Program| apply_script(p, script);
    let (got, _) = prep.run(&inst, false, Some(&f), Mode::Checked).unwrap();
    compare(&got, &inst.oracle().unwrap(), ValueDType::I32).unwrap();
    let p1 = prep.stage1(false);
    apply_script(&crate::lower::lower_sparse_iteration(&p1).unwrap(), script).unwrap()
}

fn loops(p: &Program) -> Vec<(String, Option<i64>)> {
    let mut out = Vec::new();
    walk_stmt(&p.body, &mut |s| {
        if let Stmt::Loop(l) = s {
            out.push((l.var.clone(), l.extent.as_int()));
        }
    });
    out
}

fn has_guard(p: &Program) -> bool {
    print(p).contains("if ((")
}

#[test]
fn split_divisible_has_no_guard() {
    let p = check(Op::SpMM, 8, "csr", "split spmm.k 4");
    let l = loops(&p);
    assert!(l.contains(&("k_o".into(), Some(2))) && l.contains(&("k_i".into(), Some(4))), "{l:?}");
    assert!(!has_guard(&p));
}

#[test]
fn split_ragged_is_guarded() {
    let p = check(Op::SpMM, 7, "csr", "split spmm.k 4");
    assert!(loops(&p).contains(&("k_o".into(), Some(2))));
    assert!(print(&p).contains("((k_o * 4) + k_i) < 7"), "{}", print(&p));
    check(Op::SpMM, 3, "csr", "split spmm.j 2");
}

#[test]
fn split_by_one_keeps_semantics() {
    let p = check(Op::SpMM, 3, "csr", "split spmm.k 1");
    assert!(loops(&p).contains(&("k_o".into(), Some(3))));
}

#[test]
fn reorder_and_fuse_inside_a_band() {
    check(Op::SpMM, 3, "csr", "reorder spmm.k spmm.j");
    check(Op::SpMM, 3, "csr", "fuse spmm.j spmm.k");
    check(Op::SpMM, 4, "bsr:b=2", "split spmm_bsr.k 2\nreorder spmm_bsr.k_i spmm_bsr.bsr_ji1 spmm_bsr.k_o\nparallel spmm_bsr_0.bsr_io1");
}

#[test]
fn reorder_across_block_rejected() {
    let inst = Instance::random(Op::SpMM, 7, 6, 3, 2, 2, 0.4, ValueDType::I32, 3).unwrap();
    let prep = prepare(&inst, &"csr".parse().unwrap()).unwrap();
    let p = crate::lower::lower_sparse_iteration(&prep.stage1(false)).unwrap();
    let e = reorder(&p, &[lref("spmm.j"), lref("spmm_0.i")]).unwrap_err();
    assert!(matches!(&e, Error::Schedule(m) if m.contains("block `spmm_0`")), "{e}");
    assert!(matches!(fuse(&p, &lref("spmm.k"), &lref("spmm.j")), Err(Error::Schedule(_))));
    assert!(matches!(split(&p, &lref("spmm.q"), 2), Err(Error::Lookup(_))));
    assert!(matches!(split(&p, &lref("nope.i"), 2), Err(Error::Lookup(_))));
    assert!(split(&p, &lref("spmm.k"), 0).is_err());
}

#[test]
fn cache_stages_preserve_results() {
    let p = check(Op::SpMM, 3, "csr", "cache_read spmm X\ncache_write spmm_0 Y");
    let s = print(&p);
    assert!(s.contains("alloc X_spmm_local") && s.contains("alloc Y_spmm_0_local"), "{s}");
    let inst = Instance::random(Op::SpMM, 7, 6, 3, 2, 2, 0.4, ValueDType::I32, 3).unwrap();
    let prep = prepare(&inst, &"csr".parse().unwrap()).unwrap();
    let p = crate::lower::lower_sparse_iteration(&prep.stage1(false)).unwrap();
    assert!(cache_read(&p, "spmm", "A").is_err());
    assert!(cache_read(&p, "spmm_0", "Y").is_err());
}

fn alloc_sizes(p: &Program) -> Vec<usize> {
    let mut out = Vec::new();
    walk_stmt(&p.body, &mut |s| {
        if let Stmt::Alloc { size, .. } = s {
            out.push(*size);
        }
    });
    out
}

#[test]
fn rfactor_groups() {
    let p = check(Op::SDDMM, 8, "csr", "rfactor sddmm.k 4");
    assert_eq!(alloc_sizes(&p), [2]);
    assert!(!has_guard(&p));
    let p = check(Op::SDDMM, 8, "csr", "rfactor sddmm.k 1");
    assert_eq!(alloc_sizes(&p), [8]);
    let p = check(Op::SDDMM, 7, "csr", "rfactor sddmm.k 4");
    assert_eq!(alloc_sizes(&p), [2]);
    check(Op::SDDMM, 5, "csr", "rfactor sddmm.k 8");
    check(Op::SpMM, 3, "csr", "reorder spmm.k spmm.j\nparallel spmm_0.i");
}

#[test]
fn rfactor_rejects_spatial_store() {
    let inst = Instance::random(Op::SpMM, 7, 6, 3, 2, 2, 0.4, ValueDType::I32, 3).unwrap();
    let prep = prepare(&inst, &"csr".parse().unwrap()).unwrap();
    let p = crate::lower::lower_sparse_iteration(&prep.stage1(false)).unwrap();
    assert!(rfactor(&p, &lref("spmm.k"), 2).is_err());
    assert!(rfactor(&p, &lref("spmm.j"), 2).is_err());
}

fn tiny(store_index: Expr) -> Program {
    let mut p = Program::new("t", Stage::II);
    p.buffers.push(BufferDecl::dense("B", ValueDType::I32, vec![4]));
    let blk = Block::new(
        "b",
        vec![Binding { var: "i_p".into(), kind: IterKind::Spatial, value: Expr::var("i") }],
        Stmt::store("B", vec![store_index], Expr::var("i_p"), false),
    );
    p.body = Stmt::for_("i", Expr::int(4), Stmt::Block(blk));
    analyze_regions(&p)
}

#[test]
fn parallel_needs_injective_writes() {
    let ok = parallel(&tiny(Expr::var("i_p")), &lref("b.i")).unwrap();
    let b = Bindings::default().with_buffer("B", Array::zeros(ValueDType::I32, 4));
    let r = interpret(&crate::lower::lower_sparse_buffers(&ok).unwrap(), b, Mode::Checked).unwrap();
    assert_eq!(r.outputs.get("B").unwrap().to_f64(), [0.0, 1.0, 2.0, 3.0]);
    assert!(parallel(&tiny(Expr::int(3).sub(Expr::var("i_p"))), &lref("b.i")).is_ok());
    let e = parallel(&tiny(Expr::int(0)), &lref("b.i")).unwrap_err();
    assert!(e.to_string().contains("injectively"), "{e}");
    let e = parallel(&tiny(Expr::var("i_p").floordiv(Expr::int(2))), &lref("b.i")).unwrap_err();
    assert!(matches!(e, Error::Schedule(_)));
}

#[test]
fn script_errors_carry_line_numbers() {
    let e = parse_script("split a.b 2\n\n  bogus a.b\n").unwrap_err();
    assert_eq!(e, Error::Parse { line: 3, col: 3, msg: "unknown schedule primitive `bogus`".into() });
    assert!(parse_script("split a.b x").is_err());
    assert!(parse_script("split ab 2").is_err());
    assert!(parse_script("reorder a.b").is_err());
    let ops = parse_script("# c\nparallel s.i # trailing\nunroll s.k 4").unwrap();
    assert_eq!(ops, [ScheduleOp::Annotate(lref("s.i"), Annotation::Parallel), ScheduleOp::Annotate(lref("s.k"), Annotation::Unroll(4))]);
}

#[test]
fn stage_one_rejected() {
    let p = Program::new("t", Stage::I);
    assert!(matches!(split(&p, &lref("a.b"), 2), Err(Error::Stage(_))));
}
