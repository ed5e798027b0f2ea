use super::*;
use crate::ir::parse;
use crate::kernels::{prepare, Instance, Op};
use crate::storage::ValueDType;

#[test]
fn emitted_c_matches_interpreter_on_every_path() {
    if !compiler_available() {
        eprintln!("no C compiler, skipping");
        return;
    }
    let paths = ["csr", "bsr:b=2", "ell", "dbsr:b=2", "srbcrs:t=2,g=2", "hyb:c=2,k=1"];
    for op in [Op::SpMM, Op::SDDMM, Op::RGMS] {
        for dt in [ValueDType::I32, ValueDType::F32] {
            for (n, path) in paths.iter().cycle().take(3 * paths.len()).enumerate() {
                let inst = Instance::random(op, 7, 6, 3, 2, 2, 0.35, dt, 40 + n as u64).unwrap();
                let prep = prepare(&inst, &path.parse().unwrap()).unwrap();
                let p = prep.compile(false, None).unwrap();
                let b = prep.bindings(&inst, false);
                let want = interpret(&p, b.clone(), Mode::Release).unwrap().outputs;
                let got = NativeKernel::compile(&p).unwrap().run(&b, 1, 2, false).unwrap();
                assert_eq!(got.times_ns.len(), 2);
                for (name, arr) in &got.outputs.buffers {
                    assert_eq!(arr, want.buffers.get(name).unwrap(), "{op:?} {dt:?} {path}: buffer {name}");
                }
            }
        }
    }
}

#[test]
fn floor_division_and_heap_alloc() {
    if !compiler_available() {
        return;
    }
    let src = r#"program t stage III {
  param n;
  buffer A i32 dense [8];
  buffer Y i32 dense [8];
  body {
    alloc big i32 [5000] {
      for i < n {
        big[(i * 600)] = ((i - 4) // 3);
        Y[i] = (big[(i * 600)] + ((i - 4) % 3));
      }
    }
  }
}
"#;
    let p = parse(src).unwrap();
    let b = Bindings::default().with_param("n", 8);
    let want = interpret(&p, b.clone(), Mode::Checked).unwrap().outputs;
    let c = emit_c(&p).unwrap();
    assert!(c.contains("calloc(5000"));
    let got = NativeKernel::compile(&p).unwrap().run(&b, 0, 1, true).unwrap();
    assert_eq!(got.outputs.buffers["Y"], want.buffers["Y"]);
    assert_eq!(got.outputs.buffers["Y"].to_f64(), [0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 2.0, 1.0]);
}

#[test]
fn kernel_signature_lists_buffers_then_params() {
    let p = parse("program k stage III {\n  param n;\n  buffer X f32 dense [4];\n  body {\n    X[0] = 1.5;\n  }\n}\n").unwrap();
    let k = emit_kernel(&p).unwrap();
    assert!(k.contains("void k(float* restrict X, int64_t n)"), "{k}");
    assert!(emit_kernel(&parse("program k stage I {\n  body {\n  }\n}\n").unwrap()).is_err());
}
