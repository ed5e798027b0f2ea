//! Direct evaluator for stage-I programs.
//!
//! Each sparse iteration walks its axes' stored entries in lexicographic
//! position order and evaluates the body with coordinates bound. Buffer
//! accesses are resolved against the stored slots: a dimension indexed by the
//! iterator of the same axis (with its parent matched the same way) is keyed
//! by position, any other dimension by coordinate, and the first slot in flat
//! order wins. Absent reads yield zero. This mirrors the lowering contract
//! without sharing any of its code, so it can serve as its oracle.

use std::collections::{BTreeMap, HashMap};

use crate::axes::{anc, Axis, AxisKind};
use crate::error::{Error, Result};
use crate::ir::{BinOp, Expr, Layout, Program, SpIterKind, SparseIteration, Stage, Stmt};
use crate::storage::{walk, Entry};

use super::data::{Array, Bindings, Value};
use super::interp::{binop, cmp_values};

struct SparseBuf {
    axes: Vec<Axis>,
    entries: Vec<Entry>,
    lookup: HashMap<Vec<bool>, HashMap<Vec<i64>, usize>>,
}

impl SparseBuf {
    fn find(&mut self, mask: &[bool], key: &[i64]) -> Option<usize> {
        if !self.lookup.contains_key(mask) {
            let mut m = HashMap::new();
            for e in &self.entries {
                let k: Vec<i64> = (0..mask.len())
                    .map(|d| if mask[d] { e.positions[d] } else { e.coords[d] } as i64)
                    .collect();
                m.entry(k).or_insert(e.flat);
            }
            self.lookup.insert(mask.to_vec(), m);
        }
        self.lookup[mask].get(key).copied()
    }
}

enum Slot {
    Dense(Vec<usize>),
    Sparse(SparseBuf),
}

struct Frame<'a> {
    axes: &'a [Axis],
    vars: BTreeMap<&'a str, usize>,
    entry: &'a Entry,
}

struct Eval<'a> {
    p: &'a Program,
    bufs: BTreeMap<String, (Array, Slot)>,
    params: &'a BTreeMap<String, i64>,
    lets: Vec<(String, Value)>,
}

impl Eval<'_> {
    fn var(&self, f: &Frame, v: &str) -> Result<Value> {
        if let Some((_, x)) = self.lets.iter().rev().find(|(n, _)| n == v) {
            return Ok(*x);
        }
        if let Some(&i) = f.vars.get(v) {
            return Ok(Value::I(f.entry.coords[i] as i64));
        }
        self.params
            .get(v)
            .map(|x| Value::I(*x))
            .ok_or_else(|| Error::Exec(format!("unbound variable `{v}`")))
    }

    fn expr(&mut self, f: &Frame, e: &Expr) -> Result<Value> {
        Ok(match e {
            Expr::Int(v) => Value::I(*v),
            Expr::Float(v) => Value::F(*v),
            Expr::Var(v) => self.var(f, v)?,
            Expr::Bin(op, a, b) => {
                let x = self.expr(f, a)?;
                match op {
                    BinOp::And if !x.truthy() => return Ok(Value::I(0)),
                    BinOp::Or if x.truthy() => return Ok(Value::I(1)),
                    _ => {}
                }
                let y = self.expr(f, b)?;
                binop(*op, x, y)?
            }
            Expr::Cmp(op, a, b) => {
                let x = self.expr(f, a)?;
                let y = self.expr(f, b)?;
                cmp_values(*op, x, y)
            }
            Expr::Select(c, a, b) => {
                if self.expr(f, c)?.truthy() {
                    self.expr(f, a)?
                } else {
                    self.expr(f, b)?
                }
            }
            Expr::Load(buffer, idx) => match self.slot(f, buffer, idx)? {
                Some(i) => self.bufs[buffer].0.get(i).unwrap(),
                None if self.p.buffer(buffer).is_some_and(|d| d.dtype.is_float()) => Value::F(0.0),
                None => Value::I(0),
            },
        })
    }

    fn slot(&mut self, f: &Frame, buffer: &str, raw: &[Expr]) -> Result<Option<usize>> {
        let mut key = Vec::with_capacity(raw.len());
        let mut mask = Vec::with_capacity(raw.len());
        let names: Vec<(String, Option<String>)> = match &self.bufs.get(buffer) {
            Some((_, Slot::Sparse(s))) => s.axes.iter().map(|a| (a.name.clone(), a.parent.clone())).collect(),
            Some((_, Slot::Dense(_))) => Vec::new(),
            None => return Err(Error::Exec(format!("unknown buffer `{buffer}`"))),
        };
        if names.is_empty() {
            for r in raw {
                key.push(self.expr(f, r)?.as_i64());
            }
            let Some((_, Slot::Dense(shape))) = self.bufs.get(buffer) else { unreachable!() };
            if key.len() != shape.len() {
                return Err(Error::Exec(format!("buffer `{buffer}` indexed with {} indices", key.len())));
            }
            let mut flat = 0usize;
            for (d, &x) in key.iter().enumerate() {
                if x < 0 || x as usize >= shape[d] {
                    return Ok(None);
                }
                flat = flat * shape[d] + x as usize;
            }
            return Ok(Some(flat));
        }
        if raw.len() != names.len() {
            return Err(Error::Exec(format!("buffer `{buffer}` indexed with {} indices", raw.len())));
        }
        for (d, (name, parent)) in names.iter().enumerate() {
            let parent_direct = match parent {
                None => true,
                Some(par) => names[..d].iter().position(|(n, _)| n == par).is_some_and(|k| mask[k]),
            };
            let direct = raw[d]
                .as_var()
                .filter(|v| !self.lets.iter().any(|(n, _)| n == v))
                .and_then(|v| f.vars.get(v))
                .filter(|&&i| &f.axes[i].name == name && parent_direct);
            match direct {
                Some(&i) => {
                    mask.push(true);
                    key.push(f.entry.positions[i] as i64);
                }
                None => {
                    mask.push(false);
                    key.push(self.expr(f, &raw[d])?.as_i64());
                }
            }
        }
        let Some((_, Slot::Sparse(s))) = self.bufs.get_mut(buffer) else { unreachable!() };
        Ok(s.find(&mask, &key))
    }

    fn stmt(&mut self, f: &Frame, s: &Stmt) -> Result<()> {
        match s {
            Stmt::Seq(v) => {
                for x in v {
                    self.stmt(f, x)?;
                }
            }
            Stmt::If { cond, then, els } => {
                if self.expr(f, cond)?.truthy() {
                    self.stmt(f, then)?;
                } else if let Some(e) = els {
                    self.stmt(f, e)?;
                }
            }
            Stmt::Let { var, value, body } => {
                let v = self.expr(f, value)?;
                self.lets.push((var.clone(), v));
                let r = self.stmt(f, body);
                self.lets.pop();
                r?;
            }
            Stmt::Store { buffer, indices, value, reduce } => {
                let v = self.expr(f, value)?;
                match self.slot(f, buffer, indices)? {
                    Some(i) => {
                        let arr = &mut self.bufs.get_mut(buffer).unwrap().0;
                        let v = if *reduce { binop(BinOp::Add, arr.get(i).unwrap(), v)? } else { v };
                        arr.set(i, v);
                    }
                    None if !v.truthy() => {}
                    None => {
                        return Err(Error::Exec(format!(
                            "non-zero write to an unstored element of `{buffer}`"
                        )))
                    }
                }
            }
            other => {
                return Err(Error::Exec(format!(
                    "statement not allowed inside a sparse iteration: {other:?}"
                )))
            }
        }
        Ok(())
    }

    fn iteration(&mut self, it: &SparseIteration, aux: &BTreeMap<String, Vec<i32>>) -> Result<()> {
        let flat = it.flat_iterators();
        let axes: Vec<Axis> = flat
            .iter()
            .map(|(_, a, _)| {
                self.p.axis(a).cloned().ok_or_else(|| Error::Exec(format!("unknown axis `{a}`")))
            })
            .collect::<Result<_>>()?;
        let entries = walk(&axes, aux)?;
        let vars = flat.iter().enumerate().map(|(i, (v, _, _))| (v.as_str(), i)).collect();
        // Padding slots of fixed-width sparse axes repeat the previous
        // coordinate; copies skip them so each value lands once.
        let mut guards: Vec<(usize, Vec<usize>, HashMap<Vec<usize>, usize>)> = Vec::new();
        if matches!(it.kind, SpIterKind::Copy { .. }) {
            for (d, a) in axes.iter().enumerate() {
                if a.kind == AxisKind::SparseFixed && a.parent.is_some() {
                    guards.push((d, anc(&axes, d)?, HashMap::new()));
                }
            }
        }
        for e in &entries {
            let mut skip = false;
            for (d, chain, seen) in guards.iter_mut() {
                let key: Vec<usize> = chain.iter().map(|&k| e.positions[k]).collect();
                if e.positions[*d] > 0 {
                    let mut prev = key.clone();
                    *prev.last_mut().unwrap() -= 1;
                    if seen.get(&prev) == Some(&e.coords[*d]) {
                        skip = true;
                    }
                }
                seen.insert(key, e.coords[*d]);
            }
            if skip {
                continue;
            }
            let f = Frame { axes: &axes, vars: BTreeMap::clone(&vars), entry: e };
            self.stmt(&f, &it.body)?;
        }
        Ok(())
    }
}

fn top_level<'a>(s: &'a Stmt, out: &mut Vec<&'a SparseIteration>) -> Result<()> {
    match s {
        Stmt::Seq(v) => v.iter().try_for_each(|x| top_level(x, out)),
        Stmt::SpIter(it) => {
            out.push(it);
            Ok(())
        }
        other => Err(Error::Exec(format!("unexpected top-level statement in stage I: {other:?}"))),
    }
}

/// Evaluates a stage-I program. Sparse buffers are bound as flat value
/// arrays in storage order, together with their aux arrays; buffers missing
/// from `b` start as zeros. Returns every buffer afterwards.
pub fn evaluate(p: &Program, b: Bindings) -> Result<Bindings> {
    if p.stage != Stage::I {
        return Err(Error::Stage(format!("reference evaluator needs stage I, got stage {}", p.stage)));
    }
    let mut aux = BTreeMap::new();
    for a in &p.axes {
        for name in [&a.indptr, &a.indices].into_iter().flatten() {
            match b.buffers.get(name) {
                Some(Array::I32(v)) => {
                    aux.insert(name.clone(), v.clone());
                }
                Some(_) => return Err(Error::Exec(format!("aux array `{name}` must be i32"))),
                None => return Err(Error::Exec(format!("missing binding for aux array `{name}`"))),
            }
        }
    }
    let mut bufs = BTreeMap::new();
    for d in &p.buffers {
        let slot = match &d.layout {
            Layout::Dense(shape) => Slot::Dense(shape.clone()),
            Layout::Sparse(names) => {
                let axes: Vec<Axis> = names
                    .iter()
                    .map(|n| p.axis(n).cloned().ok_or_else(|| Error::Exec(format!("unknown axis `{n}`"))))
                    .collect::<Result<_>>()?;
                let entries = walk(&axes, &aux)?;
                Slot::Sparse(SparseBuf { axes, entries, lookup: HashMap::new() })
            }
        };
        let n = match &slot {
            Slot::Dense(shape) => shape.iter().product(),
            Slot::Sparse(s) => s.entries.len(),
        };
        let arr = match b.buffers.get(&d.name) {
            Some(a) if a.dtype() != d.dtype => {
                return Err(Error::Exec(format!("buffer `{}` bound with the wrong dtype", d.name)))
            }
            Some(a) if a.len() != n => {
                return Err(Error::Exec(format!(
                    "buffer `{}` bound with length {}, expects {n}",
                    d.name,
                    a.len()
                )))
            }
            Some(a) => a.clone(),
            None => Array::zeros(d.dtype, n),
        };
        bufs.insert(d.name.clone(), (arr, slot));
    }
    let mut its = Vec::new();
    top_level(&p.body, &mut its)?;
    let mut ev = Eval { p, bufs, params: &b.params, lets: Vec::new() };
    for it in its {
        ev.iteration(it, &aux)?;
    }
    let mut out = b.clone();
    for (name, (arr, _)) in ev.bufs {
        out.buffers.insert(name, arr);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse;

    const SRC: &str = "program spmm stage I {
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
}";

    #[test]
    fn spmm_matches_hand_result() {
        let p = parse(SRC).unwrap();
        // M = [[1,0,2,0],[0,0,0,3],[4,5,6,7],[0,0,0,0]], X = column [r, 1]
        let b = Bindings::default()
            .with_buffer("J_indptr", Array::I32(vec![0, 2, 3, 7, 7]))
            .with_buffer("J_indices", Array::I32(vec![0, 2, 3, 0, 1, 2, 3]))
            .with_buffer("A", Array::I32(vec![1, 2, 3, 4, 5, 6, 7]))
            .with_buffer("X", Array::I32(vec![0, 1, 1, 1, 2, 1, 3, 1]));
        let out = evaluate(&p, b).unwrap();
        assert_eq!(out.buffers["Y"], Array::I32(vec![4, 3, 9, 3, 38, 22, 0, 0]));
    }

    #[test]
    fn absent_read_is_zero() {
        let src = SRC.replace("Y[i, k] += (A[i, j] * X[j, k]);", "Y[i, k] += A[i, 1];");
        let p = parse(&src).unwrap();
        let b = Bindings::default()
            .with_buffer("J_indptr", Array::I32(vec![0, 2, 3, 7, 7]))
            .with_buffer("J_indices", Array::I32(vec![0, 2, 3, 0, 1, 2, 3]))
            .with_buffer("A", Array::I32(vec![1, 2, 3, 4, 5, 6, 7]));
        let out = evaluate(&p, b).unwrap();
        // row 2 holds 5 at column 1 and has four stored entries
        assert_eq!(out.buffers["Y"], Array::I32(vec![0, 0, 0, 0, 20, 20, 0, 0]));
    }
}
