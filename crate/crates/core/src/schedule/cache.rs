//! Staging of a dense buffer's block region in a local scratch buffer.

use crate::error::{Error, Result};
use crate::ir::simplify::simplify_expr;
use crate::ir::visit::{map_expr, map_stmt_exprs, map_stmts, stored_buffers, walk_stmt};
use crate::ir::{Block, CmpOp, Expr, Layout, Loop, Program, Region, Stmt};

use super::{finish, fresh, require_stage2, taken_names, try_map_children};

fn find_block(p: &Program, name: &str) -> Result<Block> {
    let mut found = Vec::new();
    walk_stmt(&p.body, &mut |s| {
        if let Stmt::Block(b) = s {
            if b.name == name {
                found.push(b.clone());
            }
        }
    });
    match found.len() {
        0 => Err(Error::Lookup(format!("no block `{name}`"))),
        1 => Ok(found.pop().unwrap()),
        _ => Err(Error::Schedule(format!("block name `{name}` is ambiguous"))),
    }
}

fn replace_block(s: &Stmt, name: &str, with: &Stmt) -> Result<Stmt> {
    match s {
        Stmt::Block(b) if b.name == name => Ok(with.clone()),
        _ => try_map_children(s, &mut |c| replace_block(c, name, with)),
    }
}

struct Staging {
    local: String,
    lo: Vec<Expr>,
    ext: Vec<i64>,
    shape: Vec<usize>,
}

impl Staging {
    fn size(&self) -> usize {
        self.ext.iter().product::<i64>().max(1) as usize
    }

    fn offset(&self, idx: &[Expr]) -> Expr {
        let mut flat = Expr::int(0);
        for (d, i) in idx.iter().enumerate() {
            flat = flat.mul(Expr::int(self.ext[d])).add(i.clone().sub(self.lo[d].clone()));
        }
        simplify_expr(&flat)
    }

    /// Loops over the staged box, running `f(source index, local offset)`
    /// where the source index is in bounds.
    fn copy_loops(&self, vars: &[String], f: &dyn Fn(Vec<Expr>, Expr) -> Stmt) -> Stmt {
        let src: Vec<Expr> = self.lo.iter().zip(vars).map(|(lo, v)| lo.clone().add(Expr::var(v))).collect();
        let mut inb = Expr::int(1);
        for (s, n) in src.iter().zip(&self.shape) {
            inb = inb
                .and(Expr::cmp(CmpOp::Ge, s.clone(), Expr::int(0)))
                .and(s.clone().lt(Expr::int(*n as i64)));
        }
        let off = self.offset(&src);
        let mut s = Stmt::if_(simplify_expr(&inb), f(src, off), None);
        for (v, e) in vars.iter().zip(&self.ext).rev() {
            s = Stmt::Loop(Loop { var: v.clone(), extent: Expr::int(*e), annotations: Vec::new(), body: Box::new(s) });
        }
        s
    }
}

fn staging(p: &Program, blk: &Block, buffer: &str, regions: &[Region], what: &str) -> Result<Staging> {
    let decl = p.buffer(buffer).ok_or_else(|| Error::Lookup(format!("no buffer `{buffer}`")))?;
    let Layout::Dense(shape) = &decl.layout else {
        return Err(Error::Schedule(format!("{what}: `{buffer}` is not a dense buffer")));
    };
    let region = regions
        .iter()
        .find(|r| r.buffer == buffer)
        .ok_or_else(|| Error::Schedule(format!("{what}: block `{}` does not access `{buffer}`", blk.name)))?;
    let mut ext = Vec::new();
    for (d, (_, e)) in region.ranges.iter().enumerate() {
        match simplify_expr(e).as_int() {
            Some(v) if v >= 0 => ext.push(v),
            _ => return Err(Error::Schedule(format!("{what}: extent of `{buffer}` dim {d} is not a constant"))),
        }
    }
    let mut taken = taken_names(p);
    Ok(Staging {
        local: fresh(&format!("{buffer}_{}_local", blk.name), &mut taken),
        lo: region.ranges.iter().map(|(lo, _)| lo.clone()).collect(),
        ext,
        shape: shape.clone(),
    })
}

fn redirect(s: &Stmt, buffer: &str, st: &Staging, stores: bool) -> Stmt {
    let s = map_stmt_exprs(s, &mut |e| {
        map_expr(e, &mut |x| match x {
            Expr::Load(b, idx) if b == buffer => Expr::Load(st.local.clone(), vec![st.offset(&idx)]),
            x => x,
        })
    });
    if !stores {
        return s;
    }
    map_stmts(&s, &mut |x| match x {
        Stmt::Store { buffer: b, indices, value, reduce } if b == buffer => {
            Stmt::Store { buffer: st.local.clone(), indices: vec![st.offset(&indices)], value, reduce }
        }
        x => x,
    })
}

fn copy_vars(p: &Program, buffer: &str, n: usize) -> Vec<String> {
    let mut taken = taken_names(p);
    (0..n).map(|d| fresh(&format!("{buffer}_c{d}"), &mut taken)).collect()
}

/// Reads of `buffer` inside block `block` go through a local copy of the
/// block's read region.
pub fn cache_read(p: &Program, block: &str, buffer: &str) -> Result<Program> {
    require_stage2(p)?;
    let blk = find_block(p, block)?;
    if stored_buffers(&blk.body).contains_key(buffer) {
        return Err(Error::Schedule(format!("cache_read: block `{block}` also writes `{buffer}`")));
    }
    let st = staging(p, &blk, buffer, &blk.reads, "cache_read")?;
    let vars = copy_vars(p, buffer, st.ext.len());
    let local = st.local.clone();
    let copy_in = st.copy_loops(&vars, &|src, off| Stmt::store(&local, vec![off], Expr::load(buffer, src), false));
    let body = redirect(&blk.body, buffer, &st, false);
    let mut nb = blk.clone();
    nb.body = Box::new(Stmt::Alloc {
        buffer: st.local.clone(),
        dtype: p.buffer(buffer).unwrap().dtype,
        size: st.size(),
        body: Box::new(Stmt::seq(vec![copy_in, body])),
    });
    finish(Program { body: replace_block(&p.body, block, &Stmt::Block(nb))?, ..p.clone() })
}

/// Writes (and reads) of `buffer` inside block `block` go to a local copy
/// of the block's write region, which is loaded before the body and stored
/// back after it.
pub fn cache_write(p: &Program, block: &str, buffer: &str) -> Result<Program> {
    require_stage2(p)?;
    let blk = find_block(p, block)?;
    let st = staging(p, &blk, buffer, &blk.writes, "cache_write")?;
    let vars = copy_vars(p, buffer, 2 * st.ext.len());
    let (vin, vout) = vars.split_at(st.ext.len());
    let local = st.local.clone();
    let copy_in = st.copy_loops(vin, &|src, off| Stmt::store(&local, vec![off], Expr::load(buffer, src), false));
    let copy_out = st.copy_loops(vout, &|src, off| Stmt::store(buffer, src, Expr::load(&local, vec![off]), false));
    let body = redirect(&blk.body, buffer, &st, true);
    let mut nb = blk.clone();
    nb.body = Box::new(Stmt::Alloc {
        buffer: st.local.clone(),
        dtype: p.buffer(buffer).unwrap().dtype,
        size: st.size(),
        body: Box::new(Stmt::seq(vec![copy_in, body, copy_out])),
    });
    finish(Program { body: replace_block(&p.body, block, &Stmt::Block(nb))?, ..p.clone() })
}
