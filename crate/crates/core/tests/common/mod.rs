//! Shared helpers for the integration suites: loop discovery on stage-II
//! programs and a random schedule generator.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use sparsekit::exec::{interpret, Array, Bindings, Mode};
use sparsekit::gen;
use sparsekit::ir::{Annotation, BufferDecl, Expr, Program, Stage, Stmt};
use sparsekit::lower::flat_index;
use sparsekit::storage::{CooMatrix, TensorStorage, ValueDType};
use sparsekit::kernels::FormatPath;
use sparsekit::schedule::{self, LoopRef};

pub const PATHS: [&str; 8] = ["csr", "bsr:b=2", "ell", "dbsr:b=2", "srbcrs:t=2,g=2", "hyb:c=1", "hyb:c=2", "hyb:c=4"];

pub fn paths() -> Vec<FormatPath> {
    PATHS.iter().map(|s| s.parse().unwrap()).collect()
}

enum Item {
    Loop(String),
    Block(String),
}

#[derive(Default)]
pub struct Loops {
    /// Every loop, named through a block it encloses or sits in.
    pub sites: Vec<LoopRef>,
    /// Maximal perfect nests, outermost first.
    pub chains: Vec<Vec<LoopRef>>,
    /// (outer, inner) loop pairs with a block between them.
    pub across: Vec<(LoopRef, LoopRef)>,
    /// Block name with the buffers it reads and writes.
    pub blocks: Vec<(String, Vec<String>, Vec<String>)>,
}

fn first_block(s: &Stmt) -> Option<String> {
    match s {
        Stmt::Block(b) => Some(b.name.clone()),
        Stmt::Loop(l) => first_block(&l.body),
        Stmt::Seq(v) => v.iter().find_map(first_block),
        Stmt::If { then, els, .. } => first_block(then).or_else(|| els.as_ref().and_then(|e| first_block(e))),
        Stmt::Let { body, .. } | Stmt::Alloc { body, .. } | Stmt::While { body, .. } => first_block(body),
        _ => None,
    }
}

fn site(path: &[Item], body: &Stmt, var: &str) -> Option<LoopRef> {
    let above = path.iter().rev().find_map(|i| match i {
        Item::Block(b) => Some(b.clone()),
        _ => None,
    });
    above.or_else(|| first_block(body)).map(|b| LoopRef::new(&b, var))
}

fn visit(s: &Stmt, path: &mut Vec<Item>, refs: &mut Vec<(String, LoopRef)>, out: &mut Loops, chain: &mut Vec<LoopRef>) {
    match s {
        Stmt::Loop(l) => {
            let Some(me) = site(path, &l.body, &l.var) else { return };
            let mut crossed = false;
            for it in path.iter().rev() {
                match it {
                    Item::Block(_) => crossed = true,
                    Item::Loop(v) if crossed => {
                        let outer = refs.iter().rev().find(|(x, _)| x == v).map(|(_, r)| r.clone());
                        if let Some(o) = outer {
                            out.across.push((o, me.clone()));
                        }
                    }
                    Item::Loop(_) => {}
                }
            }
            out.sites.push(me.clone());
            refs.push((l.var.clone(), me.clone()));
            chain.push(me);
            path.push(Item::Loop(l.var.clone()));
            if matches!(*l.body, Stmt::Loop(_)) {
                visit(&l.body, path, refs, out, chain);
            } else {
                if chain.len() > 1 {
                    out.chains.push(chain.clone());
                }
                chain.clear();
                visit(&l.body, path, refs, out, chain);
            }
            path.pop();
        }
        Stmt::Block(b) => {
            out.blocks.push((
                b.name.clone(),
                b.reads.iter().map(|r| r.buffer.clone()).collect(),
                b.writes.iter().map(|r| r.buffer.clone()).collect(),
            ));
            path.push(Item::Block(b.name.clone()));
            if let Some(i) = &b.init {
                visit(i, path, refs, out, &mut Vec::new());
            }
            visit(&b.body, path, refs, out, &mut Vec::new());
            path.pop();
        }
        other => {
            for c in sparsekit::ir::visit::children(other) {
                visit(c, path, refs, out, &mut Vec::new());
            }
        }
    }
}

pub fn loops(p: &Program) -> Loops {
    let mut out = Loops::default();
    visit(&p.body, &mut Vec::new(), &mut Vec::new(), &mut out, &mut Vec::new());
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Split,
    Reorder,
    Fuse,
    Parallel,
    Rfactor,
    CacheRead,
    CacheWrite,
    Unroll,
}

/// Attempts `len` random primitives in sequence; rejected ones are skipped.
/// Returns the result and the primitives that were applied.
pub fn random_schedule(p: &Program, rng: &mut impl Rng, len: usize) -> (Program, Vec<(Kind, String)>) {
    let mut cur = p.clone();
    let mut applied = Vec::new();
    for _ in 0..len {
        let l = loops(&cur);
        if l.sites.is_empty() {
            break;
        }
        let pick_site = |rng: &mut dyn rand::RngCore| l.sites.choose(rng).unwrap().clone();
        let kind = *[
            Kind::Split,
            Kind::Split,
            Kind::Reorder,
            Kind::Reorder,
            Kind::Fuse,
            Kind::Parallel,
            Kind::Parallel,
            Kind::Rfactor,
            Kind::Rfactor,
            Kind::CacheRead,
            Kind::CacheWrite,
            Kind::Unroll,
        ]
        .choose(rng)
        .unwrap();
        let (r, what) = match kind {
            Kind::Split => {
                let s = pick_site(rng);
                let f = rng.gen_range(1..=4);
                (schedule::split(&cur, &s, f), format!("split {s} {f}"))
            }
            Kind::Reorder | Kind::Fuse => {
                let Some(c) = l.chains.choose(rng) else { continue };
                let w = if kind == Kind::Fuse { 2 } else { rng.gen_range(2..=c.len().min(3)) };
                let start = rng.gen_range(0..=c.len() - w);
                let mut win: Vec<LoopRef> = c[start..start + w].to_vec();
                if kind == Kind::Fuse {
                    (schedule::fuse(&cur, &win[0], &win[1]), format!("fuse {} {}", win[0], win[1]))
                } else {
                    win.shuffle(rng);
                    let text = win.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" ");
                    (schedule::reorder(&cur, &win), format!("reorder {text}"))
                }
            }
            Kind::Parallel => {
                let s = pick_site(rng);
                (schedule::parallel(&cur, &s), format!("parallel {s}"))
            }
            Kind::Unroll => {
                let s = pick_site(rng);
                (schedule::annotate(&cur, &s, Annotation::Unroll(4)), format!("unroll {s} 4"))
            }
            Kind::Rfactor => {
                let s = pick_site(rng);
                let f = rng.gen_range(1..=4);
                (schedule::rfactor(&cur, &s, f), format!("rfactor {s} {f}"))
            }
            Kind::CacheRead | Kind::CacheWrite => {
                let Some((b, reads, writes)) = l.blocks.choose(rng) else { continue };
                let pool = if kind == Kind::CacheRead { reads } else { writes };
                let Some(buf) = pool.choose(rng) else { continue };
                if kind == Kind::CacheRead {
                    (schedule::cache_read(&cur, b, buf), format!("cache_read {b} {buf}"))
                } else {
                    (schedule::cache_write(&cur, b, buf), format!("cache_write {b} {buf}"))
                }
            }
        };
        if let Ok(next) = r {
            cur = next;
            applied.push((kind, what));
        }
    }
    (cur, applied)
}

pub fn random_coo(rng: &mut impl Rng, max: usize) -> CooMatrix {
    let rows = rng.gen_range(1..=max);
    let cols = rng.gen_range(1..=max);
    let density = rng.gen_range(0.0..0.35);
    gen::random(rows, cols, density, rng.gen()).unwrap()
}

/// Evaluates the flattened offset of every probe (per-axis positions) in one
/// stage-III program.
pub fn flat_offsets(s: &TensorStorage, probes: &[Vec<usize>]) -> Vec<i64> {
    let nd = s.axes.len();
    let mut p = Program::new("probe", Stage::III);
    p.axes = s.axes.clone();
    let mut b = Bindings::default();
    for (k, v) in &s.aux {
        p.buffers.push(BufferDecl::dense(k, ValueDType::I32, vec![v.len()]));
        b.buffers.insert(k.clone(), Array::I32(v.clone()));
    }
    let flat: Vec<i32> = probes.iter().flatten().map(|&x| x as i32).collect();
    p.buffers.push(BufferDecl::dense("P", ValueDType::I32, vec![flat.len()]));
    p.buffers.push(BufferDecl::dense("O", ValueDType::I32, vec![probes.len()]));
    b.buffers.insert("P".into(), Array::I32(flat));
    let names: Vec<&str> = s.axes.iter().map(|a| a.name.as_str()).collect();
    let decl = BufferDecl::sparse("A", ValueDType::F32, &names);
    let pos: Vec<Expr> =
        (0..nd).map(|d| Expr::load("P", vec![Expr::var("t").mul(Expr::int(nd as i64)).add(Expr::int(d as i64))])).collect();
    let idx = flat_index(&p, &decl, &pos).unwrap();
    p.body = Stmt::for_("t", Expr::int(probes.len() as i64), Stmt::store("O", vec![Expr::var("t")], idx, false));
    let r = interpret(&p, b, Mode::Checked).unwrap();
    assert!(r.violations.is_empty(), "{:?}", r.violations);
    r.outputs.get("O").unwrap().to_f64().into_iter().map(|x| x as i64).collect()
}

/// Stage-I source over a CSR matrix `A` (axes I, J) plus a dense column
/// axis K of the same length.
pub fn csr_program(m: usize, n: usize, nnz: usize, body: &str, buffers: &str) -> String {
    format!(
        "program t stage I {{\n  axis I dense_fixed length {m};\n  axis J sparse_variable parent I length {n} nnz {nnz} indptr J_indptr indices J_indices;\n  axis K dense_fixed length {n};\n  buffer A i32 sparse [I, J];\n{buffers}  body {{\n{body}  }}\n}}\n"
    )
}
