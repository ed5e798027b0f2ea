//! Format decomposition.
//!
//! A rewrite rule describes a new layout for one sparse buffer: the new axes,
//! how original axes map onto them, and an affine index map with its
//! inverse. Decomposition emits one copy iteration per rule that fills the new
//! buffer from the original, then one compute iteration per rule that mirrors
//! the original computation on the new buffer.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::axes::{anc, Axis, AxisKind};
use crate::error::{Error, Result};
use crate::exec::{Array, Bindings};
use crate::ir::simplify::simplify_expr;
use crate::ir::visit::{bound_vars, expr_vars, fresh_name, map_expr, map_stmt_exprs, stored_buffers, subst_stmt, walk_expr};
use crate::ir::{BinOp, BufferDecl, Expr, IterKind, Layout, Program, SpIterKind, SpIterator, SparseIteration, Stmt};
use crate::storage::walk;

use super::require_stage_one;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormatRewriteRule {
    pub name: String,
    pub target_buffer: String,
    pub new_buffer: String,
    /// Axes of the new layout, parents first, in buffer order.
    pub new_axes: Vec<Axis>,
    /// Original axis → new axes, in the order their iterators are emitted.
    /// An empty list pins the original axis to the constant given by the
    /// inverse map.
    pub axis_map: Vec<(String, Vec<String>)>,
    /// New coordinate from original coordinates (variables are axis names).
    /// `None` marks an axis whose coordinate is structural, such as a group
    /// counter.
    pub idx_map: Vec<(String, Option<Expr>)>,
    /// Original coordinate from new coordinates.
    pub inv_idx_map: Vec<(String, Expr)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxRequest {
    pub array: String,
    pub rule: String,
    pub shape: String,
}

/// Aux arrays the caller must supply for the decomposed program.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxDataRequest {
    pub arrays: Vec<AuxRequest>,
}

fn check_affine(e: &Expr, what: &str) -> Result<()> {
    let bad = |m: &str| Err(Error::Decompose(format!("{what} is not affine: {m}")));
    match e {
        Expr::Int(_) | Expr::Var(_) => Ok(()),
        Expr::Bin(op, a, b) => {
            match op {
                BinOp::Add | BinOp::Sub => {}
                BinOp::Mul if a.as_int().is_some() || b.as_int().is_some() => {}
                BinOp::FloorDiv | BinOp::Mod if b.as_int().is_some_and(|d| d > 0) => {}
                _ => return bad(&format!("operator {}", op.symbol())),
            }
            check_affine(a, what)?;
            check_affine(b, what)
        }
        _ => bad("only integer variables, constants, +, -, constant *, // and % are allowed"),
    }
}

fn eval(e: &Expr, env: &BTreeMap<String, i64>) -> Result<i64> {
    let v = map_expr(e, &mut |x| match x {
        Expr::Var(v) => env.get(&v).map(|c| Expr::int(*c)).unwrap_or(Expr::Var(v)),
        x => x,
    });
    simplify_expr(&v)
        .as_int()
        .ok_or_else(|| Error::Decompose(format!("cannot evaluate index map `{}`", crate::ir::print_expr(e))))
}

impl FormatRewriteRule {
    fn target_axes(&self, p: &Program) -> Result<Vec<String>> {
        let decl = p
            .buffer(&self.target_buffer)
            .ok_or_else(|| Error::Decompose(format!("rule `{}`: no buffer `{}`", self.name, self.target_buffer)))?;
        match &decl.layout {
            Layout::Sparse(a) => Ok(a.clone()),
            Layout::Dense(_) => Err(Error::Decompose(format!(
                "rule `{}`: target `{}` is not sparse",
                self.name, self.target_buffer
            ))),
        }
    }

    fn inv(&self, axis: &str) -> Result<&Expr> {
        self.inv_idx_map
            .iter()
            .find(|(a, _)| a == axis)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::Decompose(format!("rule `{}`: no inverse map for `{axis}`", self.name)))
    }

    /// Structural checks plus a sampled round trip `f⁻¹(f(x)) = x`.
    pub fn check(&self, p: &Program) -> Result<()> {
        let targets = self.target_axes(p)?;
        let mapped: BTreeSet<&str> = self.axis_map.iter().map(|(a, _)| a.as_str()).collect();
        if mapped != targets.iter().map(String::as_str).collect() {
            return Err(Error::Decompose(format!(
                "rule `{}`: axis map must cover exactly the axes of `{}`",
                self.name, self.target_buffer
            )));
        }
        let new_names: BTreeSet<&str> = self.new_axes.iter().map(|a| a.name.as_str()).collect();
        for (_, list) in &self.axis_map {
            if let Some(x) = list.iter().find(|x| !new_names.contains(x.as_str())) {
                return Err(Error::Decompose(format!("rule `{}`: unknown new axis `{x}`", self.name)));
            }
        }
        for (a, e) in &self.inv_idx_map {
            check_affine(e, &format!("inverse map of `{a}`"))?;
            if let Some(v) = expr_vars(e).iter().find(|v| !new_names.contains(v.as_str())) {
                return Err(Error::Decompose(format!("rule `{}`: inverse map uses `{v}`", self.name)));
            }
        }
        for (a, e) in &self.idx_map {
            if let Some(e) = e {
                check_affine(e, &format!("index map of `{a}`"))?;
            }
        }
        for t in &targets {
            self.inv(t)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..64 {
            let mut x = BTreeMap::new();
            for t in &targets {
                let inv = self.inv(t)?;
                let v = match inv.as_int() {
                    Some(c) => c,
                    None => {
                        let len = p.axis(t).map_or(1, |a| a.length.max(1));
                        rng.gen_range(0..len as i64)
                    }
                };
                x.insert(t.clone(), v);
            }
            let mut y = BTreeMap::new();
            for a in &self.new_axes {
                let v = match self.idx_map.iter().find(|(n, _)| n == &a.name) {
                    Some((_, Some(e))) => eval(e, &x)?,
                    _ => 0,
                };
                y.insert(a.name.clone(), v);
            }
            for t in &targets {
                let back = eval(self.inv(t)?, &y)?;
                if back != x[t] {
                    return Err(Error::Decompose(format!(
                        "rule `{}`: inverse map does not undo the index map at {t} = {}",
                        self.name, x[t]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn lower_name(s: &str) -> String {
    s.to_lowercase()
}

fn copy_iteration(p: &Program, rule: &FormatRewriteRule, taken: &mut BTreeSet<String>) -> Result<Stmt> {
    let mut vars = BTreeMap::new();
    let mut iterators = Vec::new();
    for a in &rule.new_axes {
        let v = fresh_name(&lower_name(&a.name), taken);
        taken.insert(v.clone());
        iterators.push(SpIterator::new(&v, &a.name, IterKind::Spatial));
        vars.insert(a.name.clone(), Expr::var(&v));
    }
    let src: Vec<Expr> = rule
        .target_axes(p)?
        .iter()
        .map(|t| Ok(crate::ir::visit::subst_expr(rule.inv(t)?, &vars)))
        .collect::<Result<_>>()?;
    let dst: Vec<Expr> = rule.new_axes.iter().map(|a| vars[&a.name].clone()).collect();
    Ok(Stmt::SpIter(SparseIteration {
        name: format!("{}_copy", rule.name),
        kind: SpIterKind::Copy { target: rule.new_buffer.clone() },
        iterators,
        body: Box::new(Stmt::store(&rule.new_buffer, dst, Expr::load(&rule.target_buffer, src), false)),
    }))
}

fn compute_iteration(
    p: &Program,
    it: &SparseIteration,
    rule: &FormatRewriteRule,
    taken: &mut BTreeSet<String>,
) -> Result<Stmt> {
    let targets = rule.target_axes(p)?;
    let mut var_of: BTreeMap<String, String> = BTreeMap::new();
    for x in &it.iterators {
        let touches = x.axes.iter().any(|a| targets.contains(a));
        if touches && x.axes.len() > 1 {
            return Err(Error::Decompose(format!(
                "iteration `{}`: fuse iterators after decomposition, not before",
                it.name
            )));
        }
        for (v, a) in x.vars.iter().zip(&x.axes) {
            var_of.insert(a.clone(), v.clone());
        }
    }
    let expected: Vec<Expr> = targets
        .iter()
        .map(|t| {
            var_of.get(t).map(|v| Expr::var(v)).ok_or_else(|| {
                Error::Decompose(format!("iteration `{}` does not iterate axis `{t}`", it.name))
            })
        })
        .collect::<Result<_>>()?;

    let mut new_var = BTreeMap::new();
    let mut iterators = Vec::new();
    for x in &it.iterators {
        let mapped = rule.axis_map.iter().find(|(a, _)| x.axes.len() == 1 && &x.axes[0] == a);
        match mapped {
            None => iterators.push(x.clone()),
            Some((_, list)) => {
                for n in list {
                    let v = fresh_name(&lower_name(n), taken);
                    taken.insert(v.clone());
                    iterators.push(SpIterator::new(&v, n, x.kind));
                    new_var.insert(n.clone(), Expr::var(&v));
                }
            }
        }
    }
    for a in &rule.new_axes {
        if !new_var.contains_key(&a.name) {
            return Err(Error::Decompose(format!("rule `{}`: new axis `{}` is never iterated", rule.name, a.name)));
        }
    }
    let new_idx: Vec<Expr> = rule.new_axes.iter().map(|a| new_var[&a.name].clone()).collect();

    let mut bad = None;
    let body = map_stmt_exprs(&it.body, &mut |e| {
        map_expr(e, &mut |x| match x {
            Expr::Load(b, idx) if b == rule.target_buffer => {
                if idx != expected {
                    bad.get_or_insert(crate::ir::print_expr(&Expr::Load(b.clone(), idx.clone())));
                    return Expr::Load(b, idx);
                }
                Expr::load(&rule.new_buffer, new_idx.clone())
            }
            x => x,
        })
    });
    if let Some(b) = bad {
        return Err(Error::Decompose(format!(
            "iteration `{}`: access `{b}` does not index the target by its iterators",
            it.name
        )));
    }
    let mut subst = BTreeMap::new();
    for t in &targets {
        let inv = crate::ir::visit::subst_expr(rule.inv(t)?, &new_var);
        subst.insert(var_of[t].clone(), inv);
    }
    let body = subst_stmt(&body, &subst);
    Ok(Stmt::SpIter(SparseIteration {
        name: format!("{}_{}", it.name, rule.name),
        kind: SpIterKind::Compute,
        iterators,
        body: Box::new(body),
    }))
}

fn reads_buffer(s: &Stmt, buffer: &str) -> bool {
    let mut found = false;
    crate::ir::visit::walk_stmt(s, &mut |x| {
        for e in crate::ir::visit::stmt_exprs(x) {
            walk_expr(e, &mut |y| {
                if matches!(y, Expr::Load(b, _) if b == buffer) {
                    found = true;
                }
            });
        }
    });
    found
}

/// Rewrites every compute iteration that reads a rule's target into one
/// iteration per rule, preceded by the copy iterations.
pub fn decompose_format(p: &Program, rules: &[FormatRewriteRule]) -> Result<(Program, AuxDataRequest)> {
    require_stage_one(p)?;
    if rules.is_empty() {
        return Err(Error::Decompose("no rules given; outputs would never be computed".into()));
    }
    let mut out = p.clone();
    let mut request = AuxDataRequest::default();
    let mut names = BTreeSet::new();
    for r in rules {
        r.check(p)?;
        if !names.insert(r.new_buffer.clone()) || p.buffer(&r.new_buffer).is_some() {
            return Err(Error::Decompose(format!("buffer `{}` declared twice", r.new_buffer)));
        }
        for a in &r.new_axes {
            match out.axis(&a.name) {
                Some(existing) if existing != a => {
                    return Err(Error::Decompose(format!("axis `{}` conflicts with an existing axis", a.name)))
                }
                Some(_) => {}
                None => out.axes.push(a.clone()),
            }
            if let Some(ptr) = &a.indptr {
                let parent = a.parent.clone().unwrap_or_default();
                request.arrays.push(AuxRequest {
                    array: ptr.clone(),
                    rule: r.name.clone(),
                    shape: format!("[entries of {parent} + 1]"),
                });
            }
            if let Some(idx) = &a.indices {
                request.arrays.push(AuxRequest {
                    array: idx.clone(),
                    rule: r.name.clone(),
                    shape: format!("[entries of {}]", a.name),
                });
            }
        }
        let dtype = p.buffer(&r.target_buffer).map(|d| d.dtype).unwrap();
        let axes: Vec<&str> = r.new_axes.iter().map(|a| a.name.as_str()).collect();
        out.buffers.push(BufferDecl::sparse(&r.new_buffer, dtype, &axes));
    }

    let mut taken = bound_vars(&p.body);
    for it in p.iterations() {
        taken.insert(it.name.clone());
    }
    let targets: BTreeSet<&str> = rules.iter().map(|r| r.target_buffer.as_str()).collect();
    let mut body = Vec::new();
    for r in rules {
        body.push(copy_iteration(p, r, &mut taken)?);
    }
    let top = match &p.body {
        Stmt::Seq(v) => v.clone(),
        s => vec![s.clone()],
    };
    for s in top {
        let Stmt::SpIter(it) = &s else {
            body.push(s);
            continue;
        };
        if let Some(t) = stored_buffers(&it.body).keys().find(|b| targets.contains(b.as_str())) {
            return Err(Error::Decompose(format!("iteration `{}` writes decomposed buffer `{t}`", it.name)));
        }
        let hit: Vec<&FormatRewriteRule> = rules.iter().filter(|r| reads_buffer(&it.body, &r.target_buffer)).collect();
        if hit.is_empty() || matches!(it.kind, SpIterKind::Copy { .. }) {
            body.push(s);
            continue;
        }
        let per_target: BTreeSet<&str> = hit.iter().map(|r| r.target_buffer.as_str()).collect();
        if per_target.len() > 1 {
            return Err(Error::Decompose(format!("iteration `{}` reads several decomposed buffers", it.name)));
        }
        for r in hit {
            body.push(compute_iteration(p, it, r, &mut taken)?);
        }
    }
    out.body = Stmt::seq(body);
    if let Stmt::Seq(v) = &out.body {
        if v.is_empty() {
            return Err(Error::Decompose("decomposed program is empty".into()));
        }
    }
    Ok((out, request))
}

/// Drops copy iterations, for when the new buffers are bound already
/// converted.
pub fn skip_copies(p: &Program) -> Program {
    let keep = |s: &Stmt| !matches!(s, Stmt::SpIter(it) if matches!(it.kind, SpIterKind::Copy { .. }));
    let body = match &p.body {
        Stmt::Seq(v) => Stmt::seq(v.iter().filter(|s| keep(s)).cloned().collect()),
        s if keep(s) => s.clone(),
        _ => Stmt::empty(),
    };
    Program { body, ..p.clone() }
}

fn aux_of(b: &Bindings) -> BTreeMap<String, Vec<i32>> {
    b.buffers
        .iter()
        .filter_map(|(k, v)| match v {
            Array::I32(x) => Some((k.clone(), x.clone())),
            _ => None,
        })
        .collect()
}

/// Counts, for every stored element of each rule target, how many rules
/// claim it through their inverse maps. Padding slots that repeat a
/// coordinate are not claims. Each stored element must be claimed exactly
/// once.
pub fn check_coverage(p: &Program, rules: &[FormatRewriteRule], b: &Bindings) -> Result<()> {
    let aux = aux_of(b);
    let mut counts: BTreeMap<&str, HashMap<Vec<usize>, usize>> = BTreeMap::new();
    for r in rules {
        if counts.contains_key(r.target_buffer.as_str()) {
            continue;
        }
        let axes: Vec<Axis> = r
            .target_axes(p)?
            .iter()
            .map(|n| p.axis(n).cloned().ok_or_else(|| Error::Decompose(format!("unknown axis `{n}`"))))
            .collect::<Result<_>>()?;
        let m = walk(&axes, &aux)?.into_iter().map(|e| (e.coords, 0)).collect();
        counts.insert(&r.target_buffer, m);
    }
    for r in rules {
        let targets = r.target_axes(p)?;
        let guards: Vec<(usize, Vec<usize>)> = r
            .new_axes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.kind == AxisKind::SparseFixed && a.parent.is_some())
            .map(|(d, _)| Ok((d, anc(&r.new_axes, d)?)))
            .collect::<Result<_>>()?;
        let mut seen: Vec<HashMap<Vec<usize>, usize>> = vec![HashMap::new(); guards.len()];
        for e in walk(&r.new_axes, &aux)? {
            let mut padding = false;
            for (g, (d, chain)) in guards.iter().enumerate() {
                let key: Vec<usize> = chain.iter().map(|&k| e.positions[k]).collect();
                if e.positions[*d] > 0 {
                    let mut prev = key.clone();
                    *prev.last_mut().unwrap() -= 1;
                    padding |= seen[g].get(&prev) == Some(&e.coords[*d]);
                }
                seen[g].insert(key, e.coords[*d]);
            }
            if padding {
                continue;
            }
            let env: BTreeMap<String, i64> =
                r.new_axes.iter().zip(&e.coords).map(|(a, c)| (a.name.clone(), *c as i64)).collect();
            let mut orig = Vec::new();
            for t in &targets {
                orig.push(eval(r.inv(t)?, &env)?);
            }
            if orig.iter().any(|&x| x < 0) {
                continue;
            }
            let key: Vec<usize> = orig.iter().map(|&x| x as usize).collect();
            if let Some(c) = counts.get_mut(r.target_buffer.as_str()).unwrap().get_mut(&key) {
                *c += 1;
            }
        }
    }
    for (t, m) in counts {
        let mut bad: Vec<(&Vec<usize>, &usize)> = m.iter().filter(|(_, c)| **c != 1).collect();
        bad.sort();
        if let Some((coords, c)) = bad.first() {
            return Err(Error::Decompose(format!(
                "element {coords:?} of `{t}` claimed by {c} rules ({} elements affected)",
                bad.len()
            )));
        }
    }
    Ok(())
}
