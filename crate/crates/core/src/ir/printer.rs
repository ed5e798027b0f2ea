//! Deterministic textual rendering; `parse` reads it back.

use std::fmt::Write as _;

use crate::axes::AxisKind;

use super::{Annotation, BufferRole, Expr, Layout, Program, SpIterKind, Stmt};

pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Int(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Float(v) => {
            let _ = write!(out, "{v:?}");
        }
        Expr::Var(v) => out.push_str(v),
        Expr::Bin(op, a, b) => match op {
            super::BinOp::Min | super::BinOp::Max => {
                out.push_str(op.symbol());
                out.push('(');
                write_expr(out, a);
                out.push_str(", ");
                write_expr(out, b);
                out.push(')');
            }
            _ => {
                out.push('(');
                write_expr(out, a);
                let _ = write!(out, " {} ", op.symbol());
                write_expr(out, b);
                out.push(')');
            }
        },
        Expr::Cmp(op, a, b) => {
            out.push('(');
            write_expr(out, a);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, b);
            out.push(')');
        }
        Expr::Load(n, idx) => {
            out.push_str(n);
            write_list(out, idx);
        }
        Expr::Select(c, a, b) => {
            out.push_str("select(");
            write_expr(out, c);
            out.push_str(", ");
            write_expr(out, a);
            out.push_str(", ");
            write_expr(out, b);
            out.push(')');
        }
    }
}

fn write_list(out: &mut String, idx: &[Expr]) {
    out.push('[');
    for (n, i) in idx.iter().enumerate() {
        if n > 0 {
            out.push_str(", ");
        }
        write_expr(out, i);
    }
    out.push(']');
}

fn quote(s: &str) -> String {
    format!("{s:?}")
}

struct Printer {
    out: String,
    depth: usize,
}

impl Printer {
    fn line(&mut self, s: &str) {
        for _ in 0..self.depth {
            self.out.push_str("  ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn nested(&mut self, head: &str, body: &Stmt) {
        self.line(&format!("{head} {{"));
        self.depth += 1;
        self.stmt(body);
        self.depth -= 1;
        self.line("}");
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Store { buffer, indices, value, reduce } => {
                let mut t = buffer.clone();
                write_list(&mut t, indices);
                let _ = write!(t, " {} {};", if *reduce { "+=" } else { "=" }, print_expr(value));
                self.line(&t);
            }
            Stmt::Seq(v) => v.iter().for_each(|x| self.stmt(x)),
            Stmt::SpIter(it) => {
                let kind = match &it.kind {
                    SpIterKind::Compute => "compute".to_string(),
                    SpIterKind::Copy { target } => format!("copy {target}"),
                };
                let iters: Vec<String> = it
                    .iterators
                    .iter()
                    .map(|i| {
                        if i.vars.len() == 1 {
                            format!("{}: {} {}", i.vars[0], i.axes[0], i.kind.letter())
                        } else {
                            format!("({}): ({}) {}", i.vars.join(", "), i.axes.join(", "), i.kind.letter())
                        }
                    })
                    .collect();
                self.nested(&format!("sp_iter {} {} [{}]", it.name, kind, iters.join(", ")), &it.body);
            }
            Stmt::Loop(l) => {
                let mut head = format!("for {} < {}", l.var, print_expr(&l.extent));
                for a in &l.annotations {
                    match a {
                        Annotation::Parallel => head.push_str(" @parallel"),
                        Annotation::Unroll(n) => {
                            let _ = write!(head, " @unroll({n})");
                        }
                        Annotation::Vectorize(n) => {
                            let _ = write!(head, " @vectorize({n})");
                        }
                    }
                }
                self.nested(&head, &l.body);
            }
            Stmt::Block(b) => {
                self.line(&format!("block {} {{", b.name));
                self.depth += 1;
                for bd in &b.bindings {
                    self.line(&format!("bind {} {} = {};", bd.var, bd.kind.letter(), print_expr(&bd.value)));
                }
                for (kw, regions) in [("read", &b.reads), ("write", &b.writes)] {
                    for r in regions {
                        let ranges: Vec<String> = r
                            .ranges
                            .iter()
                            .map(|(lo, ext)| format!("{}:{}", print_expr(lo), print_expr(ext)))
                            .collect();
                        self.line(&format!("{kw} {}[{}];", r.buffer, ranges.join(", ")));
                    }
                }
                for (k, v) in &b.attrs {
                    self.line(&format!("attr {k} {};", quote(v)));
                }
                if let Some(init) = &b.init {
                    self.nested("init", init);
                }
                self.nested("body", &b.body);
                self.depth -= 1;
                self.line("}");
            }
            Stmt::Search(sb) => {
                let head = format!(
                    "search {} {} {}({}, {}) key {} -> ({}, {})",
                    sb.name,
                    sb.mode.keyword(),
                    sb.array,
                    print_expr(&sb.lo),
                    print_expr(&sb.hi),
                    print_expr(&sb.key),
                    sb.result,
                    sb.found
                );
                self.nested(&head, &sb.body);
            }
            Stmt::If { cond, then, els } => {
                self.line(&format!("if {} {{", print_expr(cond)));
                self.depth += 1;
                self.stmt(then);
                self.depth -= 1;
                match els {
                    Some(e) => {
                        self.line("} else {");
                        self.depth += 1;
                        self.stmt(e);
                        self.depth -= 1;
                        self.line("}");
                    }
                    None => self.line("}"),
                }
            }
            Stmt::Let { var, value, body } => {
                self.nested(&format!("let {var} = {} in", print_expr(value)), body);
            }
            Stmt::While { cond, body } => self.nested(&format!("while {}", print_expr(cond)), body),
            Stmt::Alloc { buffer, dtype, size, body } => {
                self.nested(&format!("alloc {buffer} {} [{size}]", dtype.keyword()), body);
            }
            Stmt::Assert { cond, msg } => {
                self.line(&format!("assert {} {};", print_expr(cond), quote(msg)));
            }
        }
    }
}

pub fn print(p: &Program) -> String {
    let mut pr = Printer { out: String::new(), depth: 0 };
    pr.line(&format!("program {} stage {} {{", p.name, p.stage));
    pr.depth += 1;
    for param in &p.params {
        pr.line(&format!("param {param};"));
    }
    for a in &p.axes {
        let mut t = format!("axis {} {}", a.name, a.kind.keyword());
        if let Some(par) = &a.parent {
            let _ = write!(t, " parent {par}");
        }
        let _ = write!(t, " length {}", a.length);
        if let Some(n) = a.nnz {
            let _ = write!(t, " nnz {n}");
        }
        if let Some(n) = a.nnz_cols {
            let _ = write!(t, " nnz_cols {n}");
        }
        if let Some(x) = &a.indptr {
            let _ = write!(t, " indptr {x}");
        }
        if let Some(x) = &a.indices {
            let _ = write!(t, " indices {x}");
        }
        debug_assert!(AxisKind::ALL.contains(&a.kind));
        t.push(';');
        pr.line(&t);
    }
    for b in &p.buffers {
        let layout = match &b.layout {
            Layout::Sparse(axes) => format!("sparse [{}]", axes.join(", ")),
            Layout::Dense(shape) => format!(
                "dense [{}]",
                shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
            ),
        };
        let mut t = format!("buffer {} {} {layout}", b.name, b.dtype.keyword());
        match b.role {
            BufferRole::Data => {}
            BufferRole::Indptr => t.push_str(" indptr"),
            BufferRole::Indices => t.push_str(" indices"),
        }
        if let Some((lo, hi)) = b.hint {
            let _ = write!(t, " hint [{lo}, {hi}]");
        }
        t.push(';');
        pr.line(&t);
    }
    pr.nested("body", &p.body);
    pr.depth -= 1;
    pr.line("}");
    pr.out
}
