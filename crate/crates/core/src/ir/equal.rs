//! Structural equality up to renaming of bound variables and local buffers.

use std::collections::BTreeMap;

use super::visit::{map_expr, map_stmt_exprs};
use super::{Expr, Program, Stmt};

#[derive(Default)]
struct Canon {
    vars: BTreeMap<String, String>,
    bufs: BTreeMap<String, String>,
    next: usize,
}

impl Canon {
    fn expr(&self, e: &Expr) -> Expr {
        map_expr(e, &mut |x| match x {
            Expr::Var(v) => Expr::Var(self.vars.get(&v).cloned().unwrap_or(v)),
            Expr::Load(b, idx) => Expr::Load(self.bufs.get(&b).cloned().unwrap_or(b), idx),
            x => x,
        })
    }

    fn bind(&mut self, v: &str) -> (String, Option<String>) {
        let fresh = format!("%{}", self.next);
        self.next += 1;
        let prev = self.vars.insert(v.to_string(), fresh.clone());
        (fresh, prev)
    }

    fn unbind(&mut self, v: &str, prev: Option<String>) {
        match prev {
            Some(p) => self.vars.insert(v.to_string(), p),
            None => self.vars.remove(v),
        };
    }

    /// Rewrites only the expressions owned directly by `s`.
    fn own(&self, s: &Stmt) -> Stmt {
        let shallow = match s {
            Stmt::Seq(_) | Stmt::SpIter(_) | Stmt::Alloc { .. } => return s.clone(),
            _ => s.clone(),
        };
        map_stmt_exprs(&shallow, &mut |e| self.expr(e))
    }

    fn stmt(&mut self, s: &Stmt) -> Stmt {
        match s {
            Stmt::Store { buffer, indices, value, reduce } => Stmt::Store {
                buffer: self.bufs.get(buffer).cloned().unwrap_or(buffer.clone()),
                indices: indices.iter().map(|i| self.expr(i)).collect(),
                value: self.expr(value),
                reduce: *reduce,
            },
            Stmt::Seq(v) => Stmt::Seq(v.iter().map(|x| self.stmt(x)).collect()),
            Stmt::SpIter(it) => {
                let mut it = it.clone();
                let mut saved = Vec::new();
                for i in &mut it.iterators {
                    for v in &mut i.vars {
                        let (fresh, prev) = self.bind(v);
                        saved.push((v.clone(), prev));
                        *v = fresh;
                    }
                }
                it.body = Box::new(self.stmt(&it.body));
                for (v, prev) in saved.into_iter().rev() {
                    self.unbind(&v, prev);
                }
                Stmt::SpIter(it)
            }
            Stmt::Loop(l) => {
                let mut l = l.clone();
                l.extent = self.expr(&l.extent);
                let (fresh, prev) = self.bind(&l.var);
                l.body = Box::new(self.stmt(&l.body));
                self.unbind(&l.var, prev);
                l.var = fresh;
                Stmt::Loop(l)
            }
            Stmt::Block(b) => {
                let mut b = b.clone();
                for bd in &mut b.bindings {
                    bd.value = self.expr(&bd.value);
                }
                let mut saved = Vec::new();
                for bd in &mut b.bindings {
                    let (fresh, prev) = self.bind(&bd.var);
                    saved.push((bd.var.clone(), prev));
                    bd.var = fresh;
                }
                for r in b.reads.iter_mut().chain(b.writes.iter_mut()) {
                    r.buffer = self.bufs.get(&r.buffer).cloned().unwrap_or(r.buffer.clone());
                    for (lo, ext) in &mut r.ranges {
                        *lo = self.expr(lo);
                        *ext = self.expr(ext);
                    }
                }
                b.init = b.init.as_ref().map(|i| Box::new(self.stmt(i)));
                b.body = Box::new(self.stmt(&b.body));
                for (v, prev) in saved.into_iter().rev() {
                    self.unbind(&v, prev);
                }
                Stmt::Block(b)
            }
            Stmt::Search(sb) => {
                let mut sb = sb.clone();
                sb.lo = self.expr(&sb.lo);
                sb.hi = self.expr(&sb.hi);
                sb.key = self.expr(&sb.key);
                sb.array = self.bufs.get(&sb.array).cloned().unwrap_or(sb.array.clone());
                let (r, pr) = self.bind(&sb.result);
                let (f, pf) = self.bind(&sb.found);
                sb.body = Box::new(self.stmt(&sb.body));
                self.unbind(&sb.found, pf);
                self.unbind(&sb.result, pr);
                sb.result = r;
                sb.found = f;
                Stmt::Search(sb)
            }
            Stmt::If { cond, then, els } => Stmt::If {
                cond: self.expr(cond),
                then: Box::new(self.stmt(then)),
                els: els.as_ref().map(|e| Box::new(self.stmt(e))),
            },
            Stmt::Let { var, value, body } => {
                let value = self.expr(value);
                let (fresh, prev) = self.bind(var);
                let body = Box::new(self.stmt(body));
                self.unbind(var, prev);
                Stmt::Let { var: fresh, value, body }
            }
            Stmt::While { cond, body } => {
                Stmt::While { cond: self.expr(cond), body: Box::new(self.stmt(body)) }
            }
            Stmt::Alloc { buffer, dtype, size, body } => {
                let fresh = format!("%b{}", self.next);
                self.next += 1;
                let prev = self.bufs.insert(buffer.clone(), fresh.clone());
                let body = Box::new(self.stmt(body));
                match prev {
                    Some(p) => self.bufs.insert(buffer.clone(), p),
                    None => self.bufs.remove(buffer),
                };
                Stmt::Alloc { buffer: fresh, dtype: *dtype, size: *size, body }
            }
            Stmt::Assert { .. } => self.own(s),
        }
    }
}

fn canonical(p: &Program) -> Program {
    let mut c = Canon::default();
    Program { body: c.stmt(&p.body), ..p.clone() }
}

/// Equality up to consistent renaming of bound variables.
pub fn structural_equal(a: &Program, b: &Program) -> bool {
    canonical(a) == canonical(b)
}
