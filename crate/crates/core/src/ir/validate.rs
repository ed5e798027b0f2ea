//! Name resolution and stage-consistency checks.

use std::collections::BTreeMap;

use crate::axes::validate_axes;

use super::visit::{stmt_exprs, walk_expr};
use super::{IterKind, Layout, Program, Stage, Stmt};

struct Checker<'a> {
    p: &'a Program,
    errors: Vec<String>,
    scope: Vec<String>,
    /// name → index count
    buffers: BTreeMap<String, usize>,
}

impl Checker<'_> {
    fn check_exprs(&mut self, s: &Stmt) {
        for e in stmt_exprs(s) {
            let mut errs = Vec::new();
            walk_expr(e, &mut |x| match x {
                super::Expr::Var(v) if !self.scope.contains(v) => {
                    errs.push(format!("unbound variable `{v}`"))
                }
                super::Expr::Load(b, idx) => self.check_access(b, idx.len(), &mut errs),
                _ => {}
            });
            self.errors.extend(errs);
        }
    }

    fn check_access(&self, b: &str, n: usize, errs: &mut Vec<String>) {
        match self.buffers.get(b) {
            None => errs.push(format!("unknown buffer `{b}`")),
            Some(&want) if want != n => {
                errs.push(format!("buffer `{b}` accessed with {n} indices, expects {want}"))
            }
            _ => {}
        }
    }

    fn stage_violation(&mut self, what: &str, allowed: &[Stage]) {
        if !allowed.contains(&self.p.stage) {
            self.errors.push(format!("{what} not allowed in a stage {} program", self.p.stage));
        }
    }

    fn with_vars(&mut self, vars: &[String], s: &Stmt) {
        let n = self.scope.len();
        self.scope.extend(vars.iter().cloned());
        self.stmt(s);
        self.scope.truncate(n);
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Store { buffer, indices, .. } => {
                let mut errs = Vec::new();
                self.check_access(buffer, indices.len(), &mut errs);
                self.errors.extend(errs);
                self.check_exprs(s);
            }
            Stmt::Seq(v) => v.iter().for_each(|x| self.stmt(x)),
            Stmt::SpIter(it) => {
                self.stage_violation("sparse iteration", &[Stage::I]);
                for i in &it.iterators {
                    for a in &i.axes {
                        if self.p.axis(a).is_none() {
                            self.errors.push(format!("unknown axis `{a}`"));
                        }
                    }
                }
                if it.iterators.iter().any(|i| i.kind == IterKind::Reduction) {
                    super::visit::walk_stmt(&it.body, &mut |x| {
                        if let Stmt::Store { buffer, reduce: false, .. } = x {
                            self.errors.push(format!(
                                "iteration `{}` has reduction iterators but stores to `{buffer}` without reduction",
                                it.name
                            ));
                        }
                    });
                }
                let vars: Vec<String> = it.iterators.iter().flat_map(|i| i.vars.clone()).collect();
                self.with_vars(&vars, &it.body);
            }
            Stmt::Loop(l) => {
                self.stage_violation("loop", &[Stage::II, Stage::III]);
                self.check_exprs(s);
                self.with_vars(std::slice::from_ref(&l.var), &l.body);
            }
            Stmt::Block(b) => {
                self.stage_violation("block", &[Stage::II, Stage::III]);
                // bindings see outer scope; regions and body see the bindings
                let n = self.scope.len();
                for bd in &b.bindings {
                    let one = Stmt::Let { var: bd.var.clone(), value: bd.value.clone(), body: Box::new(Stmt::empty()) };
                    self.check_exprs(&one);
                }
                self.scope.extend(b.bindings.iter().map(|x| x.var.clone()));
                let regions = Stmt::Block(super::Block {
                    bindings: Vec::new(),
                    ..b.clone()
                });
                self.check_exprs(&regions);
                for r in b.reads.iter().chain(&b.writes) {
                    let mut errs = Vec::new();
                    self.check_access(&r.buffer, r.ranges.len(), &mut errs);
                    self.errors.extend(errs);
                }
                if let Some(i) = &b.init {
                    self.stmt(i);
                }
                self.stmt(&b.body);
                self.scope.truncate(n);
            }
            Stmt::Search(sb) => {
                self.stage_violation("binary search block", &[Stage::II, Stage::III]);
                self.check_exprs(s);
                if !self.buffers.contains_key(&sb.array) {
                    self.errors.push(format!("unknown buffer `{}`", sb.array));
                }
                self.with_vars(&[sb.result.clone(), sb.found.clone()], &sb.body);
            }
            Stmt::If { then, els, .. } => {
                self.check_exprs(s);
                self.stmt(then);
                if let Some(e) = els {
                    self.stmt(e);
                }
            }
            Stmt::Let { var, body, .. } => {
                self.check_exprs(s);
                self.with_vars(std::slice::from_ref(var), body);
            }
            Stmt::While { body, .. } => {
                self.stage_violation("while loop", &[Stage::III]);
                self.check_exprs(s);
                self.stmt(body);
            }
            Stmt::Alloc { buffer, body, .. } => {
                self.stage_violation("local allocation", &[Stage::II, Stage::III]);
                let prev = self.buffers.insert(buffer.clone(), 1);
                self.stmt(body);
                match prev {
                    Some(v) => self.buffers.insert(buffer.clone(), v),
                    None => self.buffers.remove(buffer),
                };
            }
            Stmt::Assert { .. } => self.check_exprs(s),
        }
    }
}

/// Returns every violation found.
pub fn validate(p: &Program) -> Result<(), Vec<String>> {
    let mut errors = Vec::new();
    if let Err(v) = validate_axes(&p.axes) {
        errors.extend(v.iter().map(|x| x.to_string()));
    }
    if p.stage == Stage::III && !p.axes.is_empty() {
        errors.push("stage III programs declare no axes".into());
    }
    let mut buffers = BTreeMap::new();
    for b in &p.buffers {
        if buffers.insert(b.name.clone(), b.ndim()).is_some() {
            errors.push(format!("duplicate buffer `{}`", b.name));
        }
        match &b.layout {
            Layout::Sparse(axes) => {
                if p.stage == Stage::III {
                    errors.push(format!("buffer `{}` is not flat in stage III", b.name));
                }
                for a in axes {
                    if p.axis(a).is_none() {
                        errors.push(format!("unknown axis `{a}` in buffer `{}`", b.name));
                    }
                }
            }
            Layout::Dense(shape) => {
                if p.stage == Stage::III && shape.len() != 1 {
                    errors.push(format!("buffer `{}` is not flat in stage III", b.name));
                }
            }
        }
    }
    let mut c = Checker { p, errors, scope: p.params.clone(), buffers };
    c.stmt(&p.body);
    if c.errors.is_empty() {
        Ok(())
    } else {
        Err(c.errors)
    }
}
