//! One node family for all three IR stages.
//!
//! Stage I holds sparse iterations over axes with coordinate-space buffer
//! accesses. Stage II holds loops, blocks and binary-search blocks with
//! position-space accesses. Stage III holds the same loop constructs over
//! flat one-dimensional buffers, with searches expanded to while-loops.

mod equal;
mod parser;
mod printer;
pub mod simplify;
mod validate;
pub mod visit;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::axes::Axis;
use crate::storage::ValueDType;

pub use equal::structural_equal;
pub use parser::parse;
pub use printer::{print, print_expr};
pub use validate::validate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
    III,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::I => "I",
            Stage::II => "II",
            Stage::III => "III",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    FloorDiv,
    Mod,
    Min,
    Max,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::FloorDiv => "//",
            BinOp::Mod => "%",
            BinOp::Min => "min",
            BinOp::Max => "max",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Int(i64),
    Float(f64),
    Var(String),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Load(String, Vec<Expr>),
    Select(Box<Expr>, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn int(v: i64) -> Expr {
        Expr::Int(v)
    }

    pub fn load(buffer: &str, idx: Vec<Expr>) -> Expr {
        Expr::Load(buffer.to_string(), idx)
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn cmp(op: CmpOp, a: Expr, b: Expr) -> Expr {
        Expr::Cmp(op, Box::new(a), Box::new(b))
    }

    pub fn select(c: Expr, a: Expr, b: Expr) -> Expr {
        Expr::Select(Box::new(c), Box::new(a), Box::new(b))
    }

    pub fn add(self, o: Expr) -> Expr {
        Expr::bin(BinOp::Add, self, o)
    }

    pub fn sub(self, o: Expr) -> Expr {
        Expr::bin(BinOp::Sub, self, o)
    }

    pub fn mul(self, o: Expr) -> Expr {
        Expr::bin(BinOp::Mul, self, o)
    }

    pub fn floordiv(self, o: Expr) -> Expr {
        Expr::bin(BinOp::FloorDiv, self, o)
    }

    pub fn rem(self, o: Expr) -> Expr {
        Expr::bin(BinOp::Mod, self, o)
    }

    pub fn and(self, o: Expr) -> Expr {
        Expr::bin(BinOp::And, self, o)
    }

    pub fn or(self, o: Expr) -> Expr {
        Expr::bin(BinOp::Or, self, o)
    }

    pub fn lt(self, o: Expr) -> Expr {
        Expr::cmp(CmpOp::Lt, self, o)
    }

    pub fn eq(self, o: Expr) -> Expr {
        Expr::cmp(CmpOp::Eq, self, o)
    }

    pub fn ne(self, o: Expr) -> Expr {
        Expr::cmp(CmpOp::Ne, self, o)
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Expr::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Expr::Var(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IterKind {
    Spatial,
    Reduction,
}

impl IterKind {
    pub fn letter(self) -> &'static str {
        match self {
            IterKind::Spatial => "S",
            IterKind::Reduction => "R",
        }
    }
}

/// One iterator of a sparse iteration; several axes make a fused iterator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpIterator {
    pub axes: Vec<String>,
    pub vars: Vec<String>,
    pub kind: IterKind,
}

impl SpIterator {
    pub fn new(var: &str, axis: &str, kind: IterKind) -> Self {
        SpIterator { axes: vec![axis.to_string()], vars: vec![var.to_string()], kind }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SpIterKind {
    Compute,
    /// Fills `target` from another buffer.
    Copy { target: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseIteration {
    pub name: String,
    pub kind: SpIterKind,
    pub iterators: Vec<SpIterator>,
    pub body: Box<Stmt>,
}

impl SparseIteration {
    /// (var, axis, kind) for every iterator variable, fused ones flattened.
    pub fn flat_iterators(&self) -> Vec<(String, String, IterKind)> {
        self.iterators
            .iter()
            .flat_map(|it| {
                it.vars.iter().zip(&it.axes).map(move |(v, a)| (v.clone(), a.clone(), it.kind))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Annotation {
    Parallel,
    Unroll(u32),
    Vectorize(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loop {
    pub var: String,
    pub extent: Expr,
    pub annotations: Vec<Annotation>,
    pub body: Box<Stmt>,
}

impl Loop {
    pub fn is_parallel(&self) -> bool {
        self.annotations.contains(&Annotation::Parallel)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub var: String,
    pub kind: IterKind,
    pub value: Expr,
}

/// Per-dimension `[min, min + extent)` intervals of a buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub buffer: String,
    pub ranges: Vec<(Expr, Expr)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub bindings: Vec<Binding>,
    pub reads: Vec<Region>,
    pub writes: Vec<Region>,
    pub attrs: BTreeMap<String, String>,
    /// Runs before the body when every reduction binding is 0.
    pub init: Option<Box<Stmt>>,
    pub body: Box<Stmt>,
}

impl Block {
    pub fn new(name: &str, bindings: Vec<Binding>, body: Stmt) -> Self {
        Block {
            name: name.to_string(),
            bindings,
            reads: Vec::new(),
            writes: Vec::new(),
            attrs: BTreeMap::new(),
            init: None,
            body: Box::new(body),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SearchMode {
    /// First position whose value is not below the key; `found` tells
    /// whether it equals the key.
    Find,
    /// Last position whose value is not above the key (segment lookup in an
    /// indptr array).
    Upper,
}

impl SearchMode {
    pub fn keyword(self) -> &'static str {
        match self {
            SearchMode::Find => "find",
            SearchMode::Upper => "upper",
        }
    }
}

/// Binary search over `array[lo..hi)`. `result` is bound to the position
/// relative to `lo`, `found` to 1 or 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBlock {
    pub name: String,
    pub mode: SearchMode,
    pub array: String,
    pub lo: Expr,
    pub hi: Expr,
    pub key: Expr,
    pub result: String,
    pub found: String,
    pub body: Box<Stmt>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Stmt {
    Store { buffer: String, indices: Vec<Expr>, value: Expr, reduce: bool },
    Seq(Vec<Stmt>),
    SpIter(SparseIteration),
    Loop(Loop),
    Block(Block),
    Search(SearchBlock),
    If { cond: Expr, then: Box<Stmt>, els: Option<Box<Stmt>> },
    Let { var: String, value: Expr, body: Box<Stmt> },
    While { cond: Expr, body: Box<Stmt> },
    /// Scoped zero-initialized local buffer.
    Alloc { buffer: String, dtype: ValueDType, size: usize, body: Box<Stmt> },
    /// Checked only in checked execution mode.
    Assert { cond: Expr, msg: String },
}

impl Stmt {
    pub fn seq(stmts: Vec<Stmt>) -> Stmt {
        let mut flat = Vec::new();
        for s in stmts {
            match s {
                Stmt::Seq(inner) => flat.extend(inner),
                s => flat.push(s),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Stmt::Seq(flat)
        }
    }

    pub fn store(buffer: &str, indices: Vec<Expr>, value: Expr, reduce: bool) -> Stmt {
        Stmt::Store { buffer: buffer.to_string(), indices, value, reduce }
    }

    pub fn let_(var: &str, value: Expr, body: Stmt) -> Stmt {
        Stmt::Let { var: var.to_string(), value, body: Box::new(body) }
    }

    pub fn if_(cond: Expr, then: Stmt, els: Option<Stmt>) -> Stmt {
        Stmt::If { cond, then: Box::new(then), els: els.map(Box::new) }
    }

    pub fn for_(var: &str, extent: Expr, body: Stmt) -> Stmt {
        Stmt::Loop(Loop {
            var: var.to_string(),
            extent,
            annotations: Vec::new(),
            body: Box::new(body),
        })
    }

    pub fn empty() -> Stmt {
        Stmt::Seq(Vec::new())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BufferRole {
    Data,
    Indptr,
    Indices,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Sparse(Vec<String>),
    Dense(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferDecl {
    pub name: String,
    pub dtype: ValueDType,
    pub layout: Layout,
    pub role: BufferRole,
    /// Inclusive value range known for aux arrays.
    pub hint: Option<(i64, i64)>,
}

impl BufferDecl {
    pub fn dense(name: &str, dtype: ValueDType, shape: Vec<usize>) -> Self {
        BufferDecl {
            name: name.to_string(),
            dtype,
            layout: Layout::Dense(shape),
            role: BufferRole::Data,
            hint: None,
        }
    }

    pub fn sparse(name: &str, dtype: ValueDType, axes: &[&str]) -> Self {
        BufferDecl {
            name: name.to_string(),
            dtype,
            layout: Layout::Sparse(axes.iter().map(|s| s.to_string()).collect()),
            role: BufferRole::Data,
            hint: None,
        }
    }

    pub fn ndim(&self) -> usize {
        match &self.layout {
            Layout::Sparse(a) => a.len(),
            Layout::Dense(s) => s.len(),
        }
    }

    pub fn is_aux(&self) -> bool {
        self.role != BufferRole::Data
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub name: String,
    pub stage: Stage,
    /// Integer scalar parameters.
    pub params: Vec<String>,
    pub axes: Vec<Axis>,
    pub buffers: Vec<BufferDecl>,
    pub body: Stmt,
}

impl Program {
    pub fn new(name: &str, stage: Stage) -> Self {
        Program {
            name: name.to_string(),
            stage,
            params: Vec::new(),
            axes: Vec::new(),
            buffers: Vec::new(),
            body: Stmt::empty(),
        }
    }

    pub fn buffer(&self, name: &str) -> Option<&BufferDecl> {
        self.buffers.iter().find(|b| b.name == name)
    }

    pub fn axis(&self, name: &str) -> Option<&Axis> {
        self.axes.iter().find(|a| a.name == name)
    }

    /// Sparse iterations of a stage-I body in program order.
    pub fn iterations(&self) -> Vec<&SparseIteration> {
        let mut out = Vec::new();
        visit::walk_stmt(&self.body, &mut |s| {
            if let Stmt::SpIter(it) = s {
                out.push(it);
            }
        });
        out
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    const SPMM: &str = r#"program spmm stage I {
  axis I dense_fixed length 4;
  axis J sparse_variable parent I length 4 nnz 7 indptr J_indptr indices J_indices;
  axis K dense_fixed length 2;
  buffer A f32 sparse [I, J];
  buffer X f32 dense [4, 2];
  buffer Y f32 dense [4, 2];
  body {
    sp_iter spmm compute [i: I S, j: J R, k: K S] {
      Y[i, k] += (A[i, j] * X[j, k]);
    }
  }
}
"#;

    #[test]
    fn round_trip_text() {
        let p = parse(SPMM).unwrap();
        assert_eq!(print(&p), SPMM);
        assert!(print(&p).contains("[i: I S, j: J R, k: K S]"));
        assert!(structural_equal(&parse(&print(&p)).unwrap(), &p));
    }

    #[test]
    fn empty_program_prints_header() {
        let p = Program::new("empty", Stage::I);
        let text = print(&p);
        assert_eq!(text, "program empty stage I {\n  body {\n  }\n}\n");
        assert_eq!(parse(&text).unwrap(), p);
    }

    #[test]
    fn unknown_axis_diagnostic() {
        let bad = SPMM.replace("[i: I S, j: J R", "[i: Q S, j: J R");
        match parse(&bad).unwrap_err() {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 9);
                assert!(msg.contains("unknown axis"), "{msg}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn stage_consistency_diagnostic() {
        let bad = SPMM.replace(
            "Y[i, k] += (A[i, j] * X[j, k]);",
            "for t < 3 {\n      }",
        );
        match parse(&bad).unwrap_err() {
            Error::Parse { msg, .. } => assert!(msg.contains("stage I"), "{msg}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn alpha_equivalence() {
        let p = parse(SPMM).unwrap();
        let q = parse(&SPMM.replace("i: I S", "ii: I S").replace("Y[i, k] += (A[i, j]", "Y[ii, k] += (A[ii, j]")).unwrap();
        assert!(structural_equal(&p, &q));
        let r = parse(&SPMM.replace("X[j, k]", "X[k, j]").replace("dense [4, 2];\n  buffer Y", "dense [4, 2];\n  buffer Y")).unwrap();
        assert!(!structural_equal(&p, &r));
    }

    #[test]
    fn dotted_attr_keys_round_trip() {
        let text = "program c stage II {\n  buffer Y f32 dense [4];\n  body {\n    for i < 4 {\n      block copy {\n        bind i_p S = i;\n        write Y[i_p:1];\n        attr sparse.copy \"1\";\n        body {\n          Y[i_p] = 0.0;\n        }\n      }\n    }\n  }\n}\n";
        let p = parse(text).unwrap();
        assert_eq!(print(&p), text);
    }
}
