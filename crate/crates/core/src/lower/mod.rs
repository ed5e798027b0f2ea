//! Stage I → II (sparse iteration lowering) and stage II → III (sparse
//! buffer lowering).

mod aux;
mod flatten;
mod loops;
mod regions;
mod translate;

pub use aux::materialize_aux_buffers;
pub use flatten::{flat_index, flat_size, lower_sparse_buffers};
pub use loops::generate_nested_loops;
pub use regions::analyze_regions;
pub use translate::translate_coordinates;

use crate::error::{Error, Result};
use crate::ir::{validate, Program, Stage};

/// Aux materialization, loop generation, coordinate translation and region
/// analysis, in that order.
pub fn lower_sparse_iteration(p: &Program) -> Result<Program> {
    if p.stage != Stage::I {
        return Err(Error::Stage(format!("wrong stage: expected I, got {}", p.stage)));
    }
    let p = materialize_aux_buffers(p)?;
    let p = generate_nested_loops(&p)?;
    let p = translate_coordinates(&p)?;
    let p = analyze_regions(&p);
    validate(&p).map_err(|v| Error::Lowering(v.join("; ")))?;
    Ok(p)
}

/// Both passes.
pub fn lower(p: &Program) -> Result<Program> {
    let p2 = lower_sparse_iteration(p)?;
    let p3 = lower_sparse_buffers(&p2)?;
    validate(&p3).map_err(|v| Error::Lowering(v.join("; ")))?;
    Ok(p3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{interpret, Array, Bindings, Mode};
    use crate::ir::{parse, print, Stmt};

    const SPMM: &str = r#"program spmm stage I {
  axis I dense_fixed length 4;
  axis J sparse_variable parent I length 4 nnz 7 indptr J_indptr indices J_indices;
  axis K dense_fixed length 2;
  buffer A i32 sparse [I, J];
  buffer X i32 dense [4, 2];
  buffer Y i32 dense [4, 2];
  body {
    sp_iter spmm compute [i: I S, j: J R, k: K S] {
      Y[i, k] += (A[i, j] * X[j, k]);
    }
  }
}
"#;

    fn m4_bindings() -> Bindings {
        Bindings::default()
            .with_buffer("J_indptr", Array::I32(vec![0, 2, 3, 7, 7]))
            .with_buffer("J_indices", Array::I32(vec![0, 2, 3, 0, 1, 2, 3]))
            .with_buffer("A", Array::I32(vec![1, 2, 3, 4, 5, 6, 7]))
            .with_buffer("X", Array::I32(vec![1, 0, 0, 1, 1, 1, 2, 3]))
    }

    #[test]
    fn spmm_lowers_and_runs() {
        let p = parse(SPMM).unwrap();
        let p2 = lower_sparse_iteration(&p).unwrap();
        let text = print(&p2);
        assert!(text.contains("J_indptr[(i_p + 1)]"), "{text}");
        assert!(!text.contains("search"), "{text}");
        let p3 = lower_sparse_buffers(&p2).unwrap();
        let r = interpret(&p3, m4_bindings(), Mode::Checked).unwrap();
        assert!(r.violations.is_empty(), "{:?}\n{}", r.violations, print(&p3));
        // dense M times X
        let m = [[1, 0, 2, 0], [0, 0, 0, 3], [4, 5, 6, 7], [0, 0, 0, 0]];
        let x = [[1, 0], [0, 1], [1, 1], [2, 3]];
        let mut want = vec![0i32; 8];
        for i in 0..4 {
            for k in 0..2 {
                want[i * 2 + k] = (0..4).map(|j| m[i][j] * x[j][k]).sum();
            }
        }
        assert_eq!(r.outputs.get("Y").unwrap(), &Array::I32(want));
    }

    #[test]
    fn wrong_stage_rejected() {
        let p = lower_sparse_iteration(&parse(SPMM).unwrap()).unwrap();
        assert!(matches!(lower_sparse_iteration(&p), Err(Error::Stage(_))));
    }

    #[test]
    fn fused_iteration_is_one_loop() {
        let src = SPMM.replace("[i: I S, j: J R, k: K S]", "[(i, j): (I, J) R, k: K S]");
        let p = parse(&src).unwrap();
        let p2 = lower_sparse_iteration(&p).unwrap();
        match &p2.body {
            Stmt::Loop(l) => assert_eq!(l.extent, crate::ir::Expr::int(7)),
            s => panic!("{s:?}"),
        }
        let p3 = lower_sparse_buffers(&p2).unwrap();
        let r = interpret(&p3, m4_bindings(), Mode::Checked).unwrap();
        let unfused = interpret(&lower(&parse(SPMM).unwrap()).unwrap(), m4_bindings(), Mode::Checked).unwrap();
        assert_eq!(r.outputs.get("Y").unwrap(), unfused.outputs.get("Y").unwrap());
        assert!(r.violations.is_empty(), "{:?}", r.violations);
    }

    #[test]
    fn coordinate_search_finds_position() {
        // Y[i] = A[i, 9] on the row {1, 3, 9, 10}
        let src = r#"program s stage I {
  axis I dense_fixed length 1;
  axis J sparse_variable parent I length 16 nnz 4 indptr J_indptr indices J_indices;
  buffer A i32 sparse [I, J];
  buffer Y i32 dense [1];
  body {
    sp_iter s compute [i: I S] {
      Y[i] = A[i, 9];
    }
  }
}
"#;
        let p3 = lower(&parse(src).unwrap()).unwrap();
        let b = Bindings::default()
            .with_buffer("J_indptr", Array::I32(vec![0, 4]))
            .with_buffer("J_indices", Array::I32(vec![1, 3, 9, 10]))
            .with_buffer("A", Array::I32(vec![0, 1, 2, 3]));
        let r = interpret(&p3, b, Mode::Checked).unwrap();
        assert_eq!(r.outputs.get("Y").unwrap(), &Array::I32(vec![2]));
        assert!(r.violations.is_empty(), "{:?}", r.violations);
    }
}
