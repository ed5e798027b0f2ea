use crate::axes::{find_axis, total_entries, AxisKind};
use crate::error::{Error, Result};
use crate::ir::{BufferDecl, BufferRole, Layout, Program};
use crate::storage::ValueDType;

/// Declares every indptr/indices array named by an axis as a one-dimensional
/// integer buffer with a value hint.
pub fn materialize_aux_buffers(p: &Program) -> Result<Program> {
    let mut out = p.clone();
    for a in &p.axes {
        if let Some(ptr) = &a.indptr {
            let nnz = a
                .nnz
                .ok_or_else(|| Error::Lowering(format!("variable axis `{}` has no nnz", a.name)))?;
            let parent = a
                .parent
                .as_ref()
                .ok_or_else(|| Error::Lowering(format!("variable axis `{}` has no parent", a.name)))?;
            let rows = total_entries(&p.axes, find_axis(&p.axes, parent)?)?;
            declare(&mut out, ptr, rows + 1, BufferRole::Indptr, (0, nnz as i64))?;
        }
        if let Some(idx) = &a.indices {
            let n = total_entries(&p.axes, a)?;
            let hi = a.length as i64 - 1;
            declare(&mut out, idx, n, BufferRole::Indices, (0, hi.max(0)))?;
        }
        if a.kind == AxisKind::SparseFixed && a.nnz_cols.is_none() {
            return Err(Error::Lowering(format!("sparse-fixed axis `{}` has no nnz_cols", a.name)));
        }
    }
    Ok(out)
}

fn declare(p: &mut Program, name: &str, len: usize, role: BufferRole, hint: (i64, i64)) -> Result<()> {
    if let Some(existing) = p.buffer(name) {
        let ok = existing.role == role && existing.layout == Layout::Dense(vec![len]);
        if !ok {
            return Err(Error::Lowering(format!("buffer `{name}` conflicts with an aux array")));
        }
        return Ok(());
    }
    let mut d = BufferDecl::dense(name, ValueDType::I32, vec![len]);
    d.role = role;
    d.hint = Some(hint);
    p.buffers.push(d);
    Ok(())
}
