//! C source for stage-III programs.
//!
//! Index arithmetic is `int64_t`, floating-point temporaries are `double`,
//! and buffers keep their declared element type. `//` and `%` round toward
//! negative infinity through the `sk_floordiv`/`sk_floormod` helpers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ir::visit::stored_buffers;
use crate::ir::{Annotation, BinOp, CmpOp, Expr, Layout, Program, Stage, Stmt};
use crate::storage::ValueDType;

/// Allocations up to this many elements live on the stack.
pub const STACK_ALLOC_LIMIT: usize = 1024;

const C_RESERVED: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum", "extern",
    "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict", "return", "short", "signed",
    "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned", "void", "volatile", "while", "main",
    "argc", "argv",
];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Ty {
    Int,
    Float,
}

pub fn c_type(d: ValueDType) -> &'static str {
    match d {
        ValueDType::I32 => "int32_t",
        ValueDType::F32 => "float",
        ValueDType::F64 => "double",
    }
}

fn ident(name: &str) -> String {
    let mut s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) || C_RESERVED.contains(&s.as_str()) || s.starts_with("sk_") {
        s.insert_str(0, "v_");
    }
    s
}

fn float_lit(v: f64) -> String {
    if v.is_nan() {
        "NAN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "INFINITY".into() } else { "(-INFINITY)".into() }
    } else {
        let s = format!("{v:?}");
        if s.contains(['.', 'e', 'E']) {
            s
        } else {
            format!("{s}.0")
        }
    }
}

struct Gen<'a> {
    out: String,
    depth: usize,
    vars: Vec<BTreeMap<String, Ty>>,
    bufs: BTreeMap<String, ValueDType>,
    p: &'a Program,
}

impl Gen<'_> {
    fn line(&mut self, s: &str) {
        for _ in 0..self.depth {
            self.out.push_str("  ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn var_ty(&self, v: &str) -> Result<Ty> {
        self.vars
            .iter()
            .rev()
            .find_map(|m| m.get(v).copied())
            .ok_or_else(|| Error::Exec(format!("codegen: unbound variable `{v}`")))
    }

    fn buf_ty(&self, b: &str) -> Result<ValueDType> {
        self.bufs.get(b).copied().ok_or_else(|| Error::Exec(format!("codegen: unknown buffer `{b}`")))
    }

    fn ty(&self, e: &Expr) -> Result<Ty> {
        Ok(match e {
            Expr::Int(_) | Expr::Cmp(..) => Ty::Int,
            Expr::Float(_) => Ty::Float,
            Expr::Var(v) => self.var_ty(v)?,
            Expr::Load(b, _) => {
                if self.buf_ty(b)?.is_float() {
                    Ty::Float
                } else {
                    Ty::Int
                }
            }
            Expr::Bin(BinOp::And | BinOp::Or, ..) => Ty::Int,
            Expr::Bin(_, a, b) | Expr::Select(_, a, b) => {
                if self.ty(a)? == Ty::Float || self.ty(b)? == Ty::Float {
                    Ty::Float
                } else {
                    Ty::Int
                }
            }
        })
    }

    fn as_ty(&self, e: &Expr, want: Ty) -> Result<String> {
        let s = self.expr(e)?;
        Ok(match (self.ty(e)?, want) {
            (Ty::Int, Ty::Float) => format!("(double){s}"),
            (Ty::Float, Ty::Int) => format!("(int64_t){s}"),
            _ => s,
        })
    }

    fn expr(&self, e: &Expr) -> Result<String> {
        Ok(match e {
            Expr::Int(v) if *v == i64::MIN => "INT64_MIN".into(),
            Expr::Int(v) => format!("INT64_C({v})"),
            Expr::Float(v) => float_lit(*v),
            Expr::Var(v) => {
                self.var_ty(v)?;
                ident(v)
            }
            Expr::Load(b, idx) => {
                let [i] = idx.as_slice() else {
                    return Err(Error::Exec(format!("codegen: load of `{b}` is not flat")));
                };
                let raw = format!("{}[{}]", ident(b), self.as_ty(i, Ty::Int)?);
                match self.buf_ty(b)? {
                    ValueDType::I32 => format!("(int64_t){raw}"),
                    ValueDType::F32 => format!("(double){raw}"),
                    ValueDType::F64 => raw,
                }
            }
            Expr::Cmp(op, a, b) => {
                let t = if self.ty(a)? == Ty::Float || self.ty(b)? == Ty::Float { Ty::Float } else { Ty::Int };
                let sym = match op {
                    CmpOp::Lt => "<",
                    CmpOp::Le => "<=",
                    CmpOp::Eq => "==",
                    CmpOp::Ne => "!=",
                    CmpOp::Gt => ">",
                    CmpOp::Ge => ">=",
                };
                format!("(int64_t)({} {sym} {})", self.as_ty(a, t)?, self.as_ty(b, t)?)
            }
            Expr::Bin(op, a, b) => {
                let t = self.ty(e)?;
                if matches!(op, BinOp::And | BinOp::Or) {
                    let t = |x: &Expr| -> Result<String> {
                        Ok(if self.ty(x)? == Ty::Float { format!("({} != 0.0)", self.expr(x)?) } else { format!("({} != 0)", self.expr(x)?) })
                    };
                    let sym = if *op == BinOp::And { "&&" } else { "||" };
                    return Ok(format!("(int64_t)({} {sym} {})", t(a)?, t(b)?));
                }
                let (x, y) = (self.as_ty(a, t)?, self.as_ty(b, t)?);
                let f = t == Ty::Float;
                match op {
                    BinOp::Add => format!("({x} + {y})"),
                    BinOp::Sub => format!("({x} - {y})"),
                    BinOp::Mul => format!("({x} * {y})"),
                    BinOp::FloorDiv if f => format!("floor({x} / {y})"),
                    BinOp::FloorDiv => format!("sk_floordiv({x}, {y})"),
                    BinOp::Mod if f => format!("sk_fmod_floor({x}, {y})"),
                    BinOp::Mod => format!("sk_floormod({x}, {y})"),
                    BinOp::Min if f => format!("fmin({x}, {y})"),
                    BinOp::Max if f => format!("fmax({x}, {y})"),
                    BinOp::Min => format!("sk_min({x}, {y})"),
                    BinOp::Max => format!("sk_max({x}, {y})"),
                    BinOp::And | BinOp::Or => unreachable!(),
                }
            }
            Expr::Select(c, a, b) => {
                let t = self.ty(e)?;
                format!("({} ? {} : {})", self.expr(c)?, self.as_ty(a, t)?, self.as_ty(b, t)?)
            }
        })
    }

    fn scoped(&mut self, vars: Vec<(String, Ty)>, body: &Stmt) -> Result<()> {
        self.vars.push(vars.into_iter().collect());
        self.depth += 1;
        let r = self.stmt(body);
        self.depth -= 1;
        self.vars.pop();
        r
    }

    fn store_value(&self, buffer: &str, value: &Expr) -> Result<String> {
        let d = self.buf_ty(buffer)?;
        Ok(match d {
            ValueDType::I32 => format!("(int32_t){}", self.as_ty(value, Ty::Int)?),
            ValueDType::F32 => format!("(float){}", self.as_ty(value, Ty::Float)?),
            ValueDType::F64 => self.as_ty(value, Ty::Float)?,
        })
    }

    fn stmt(&mut self, s: &Stmt) -> Result<()> {
        match s {
            Stmt::Store { buffer, indices, value, reduce } => {
                let [i] = indices.as_slice() else {
                    return Err(Error::Exec(format!("codegen: store to `{buffer}` is not flat")));
                };
                let at = format!("{}[{}]", ident(buffer), self.as_ty(i, Ty::Int)?);
                if *reduce {
                    let sum = Expr::bin(BinOp::Add, Expr::load(buffer, vec![i.clone()]), value.clone());
                    let v = self.store_value(buffer, &sum)?;
                    self.line(&format!("{at} = {v};"));
                } else {
                    let v = self.store_value(buffer, value)?;
                    self.line(&format!("{at} = {v};"));
                }
            }
            Stmt::Seq(v) => {
                for x in v {
                    self.stmt(x)?;
                }
            }
            Stmt::Loop(l) => {
                for a in &l.annotations {
                    match a {
                        Annotation::Parallel => self.line("/* parallel: iterations may run concurrently */"),
                        Annotation::Unroll(n) => self.line(&format!("#pragma GCC unroll {n}")),
                        Annotation::Vectorize(n) => self.line(&format!("/* vectorize {n} */")),
                    }
                }
                let v = ident(&l.var);
                let ext = self.as_ty(&l.extent, Ty::Int)?;
                self.line(&format!("for (int64_t {v} = 0, {v}_n = {ext}; {v} < {v}_n; ++{v}) {{"));
                self.scoped(vec![(l.var.clone(), Ty::Int)], &l.body)?;
                self.line("}");
            }
            Stmt::Block(b) => {
                self.line(&format!("{{ /* block {} */", b.name));
                self.depth += 1;
                for bd in &b.bindings {
                    let t = self.ty(&bd.value)?;
                    let cty = if t == Ty::Float { "double" } else { "int64_t" };
                    self.line(&format!("const {cty} {} = {};", ident(&bd.var), self.expr(&bd.value)?));
                    self.vars.push(BTreeMap::from([(bd.var.clone(), t)]));
                }
                if let Some(init) = &b.init {
                    let red: Vec<String> = b
                        .bindings
                        .iter()
                        .filter(|bd| bd.kind == crate::ir::IterKind::Reduction)
                        .map(|bd| format!("{} == 0", ident(&bd.var)))
                        .collect();
                    let cond = if red.is_empty() { "1".to_string() } else { red.join(" && ") };
                    self.line(&format!("if ({cond}) {{"));
                    self.scoped(Vec::new(), init)?;
                    self.line("}");
                }
                self.stmt(&b.body)?;
                for _ in &b.bindings {
                    self.vars.pop();
                }
                self.depth -= 1;
                self.line("}");
            }
            Stmt::If { cond, then, els } => {
                self.line(&format!("if ({}) {{", self.expr(cond)?));
                self.scoped(Vec::new(), then)?;
                if let Some(e) = els {
                    self.line("} else {");
                    self.scoped(Vec::new(), e)?;
                }
                self.line("}");
            }
            Stmt::Let { var, value, body } => {
                let t = self.ty(value)?;
                let cty = if t == Ty::Float { "double" } else { "int64_t" };
                self.line("{");
                self.depth += 1;
                self.line(&format!("const {cty} {} = {};", ident(var), self.expr(value)?));
                self.depth -= 1;
                self.scoped(vec![(var.clone(), t)], body)?;
                self.line("}");
            }
            Stmt::While { cond, body } => {
                self.line(&format!("while ({}) {{", self.expr(cond)?));
                self.scoped(Vec::new(), body)?;
                self.line("}");
            }
            Stmt::Alloc { buffer, dtype, size, body } => {
                let (n, t) = (ident(buffer), c_type(*dtype));
                let prev = self.bufs.insert(buffer.clone(), *dtype);
                self.line("{");
                self.depth += 1;
                let heap = *size > STACK_ALLOC_LIMIT;
                if heap {
                    self.line(&format!("{t}* {n} = ({t}*)calloc({size}, sizeof({t}));"));
                    self.line(&format!("if (!{n}) sk_fail(\"out of memory allocating {n}\");"));
                } else {
                    self.line(&format!("{t} {n}[{}] = {{0}};", (*size).max(1)));
                }
                self.depth -= 1;
                self.scoped(Vec::new(), body)?;
                if heap {
                    self.depth += 1;
                    self.line(&format!("free({n});"));
                    self.depth -= 1;
                }
                self.line("}");
                match prev {
                    Some(d) => self.bufs.insert(buffer.clone(), d),
                    None => self.bufs.remove(buffer),
                };
            }
            Stmt::Assert { cond, msg } => {
                let m = msg.replace('\\', "\\\\").replace('"', "\\\"");
                self.line("#ifdef SK_CHECKED");
                self.line(&format!("if (!({})) sk_fail(\"assertion failed: {m}\");", self.expr(cond)?));
                self.line("#endif");
            }
            Stmt::SpIter(_) | Stmt::Search(_) => {
                return Err(Error::Stage("C emission needs a fully lowered stage-III program".into()))
            }
        }
        Ok(())
    }
}

const PRELUDE: &str = r#"#include <math.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

static void sk_fail(const char* msg) {
  fprintf(stderr, "%s\n", msg);
  exit(3);
}

static inline int64_t sk_floordiv(int64_t a, int64_t b) {
  int64_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

static inline int64_t sk_floormod(int64_t a, int64_t b) { return a - sk_floordiv(a, b) * b; }
static inline double sk_fmod_floor(double a, double b) { return a - floor(a / b) * b; }
static inline int64_t sk_min(int64_t a, int64_t b) { return a < b ? a : b; }
static inline int64_t sk_max(int64_t a, int64_t b) { return a > b ? a : b; }
"#;

fn buffer_len(p: &Program, name: &str) -> Result<usize> {
    match &p.buffer(name).map(|b| &b.layout) {
        Some(Layout::Dense(shape)) => Ok(shape.iter().product()),
        _ => Err(Error::Stage(format!("buffer `{name}` is not flat"))),
    }
}

/// The kernel function alone: `void name(T* restrict buf, ..., int64_t
/// param, ...)`. Buffers must not overlap.
pub fn emit_kernel(p: &Program) -> Result<String> {
    if p.stage != Stage::III {
        return Err(Error::Stage(format!("C emission needs stage III, got {}", p.stage)));
    }
    let mut g = Gen {
        out: String::new(),
        depth: 1,
        vars: vec![p.params.iter().map(|x| (x.clone(), Ty::Int)).collect()],
        bufs: p.buffers.iter().map(|b| (b.name.clone(), b.dtype)).collect(),
        p,
    };
    let mut head = String::new();
    writeln!(head, "/* {}: generated kernel", p.name).unwrap();
    for b in &p.buffers {
        writeln!(head, " *   {} {}[{}]", b.dtype.keyword(), b.name, buffer_len(g.p, &b.name)?).unwrap();
    }
    for x in &p.params {
        writeln!(head, " *   param {x}").unwrap();
    }
    head.push_str(" * buffers must not overlap\n */\n");
    let mut args: Vec<String> =
        p.buffers.iter().map(|b| format!("{}* restrict {}", c_type(b.dtype), ident(&b.name))).collect();
    args.extend(p.params.iter().map(|x| format!("int64_t {}", ident(x))));
    let sig = format!("void {}({})", ident(&p.name), if args.is_empty() { "void".into() } else { args.join(", ") });
    g.stmt(&p.body)?;
    Ok(format!("{head}{sig} {{\n{}}}\n", g.out))
}

/// Kernel plus a command-line driver:
///
/// `prog <dir> <warmup> <repeats> <flush> [param ...]`
///
/// Each buffer `B` is read from `<dir>/B.bin` (raw little-endian, zeros
/// when the file is missing). Every run starts from the loaded contents.
/// The driver prints one line per timed run with its duration in
/// nanoseconds, then writes every buffer the kernel stores to as
/// `<dir>/B.out`. With `flush` non-zero a 64 MiB scratch area is swept
/// before each run.
pub fn emit_c(p: &Program) -> Result<String> {
    let kernel = emit_kernel(p)?;
    let written: BTreeSet<String> =
        stored_buffers(&p.body).into_keys().filter(|b| p.buffer(b).is_some()).collect();
    let mut d = String::new();
    d.push_str(
        r#"
static void* sk_load(const char* dir, const char* name, size_t n, size_t w) {
  char path[4096];
  void* p = calloc(n ? n : 1, w);
  if (!p) sk_fail("out of memory");
  snprintf(path, sizeof path, "%s/%s.bin", dir, name);
  FILE* f = fopen(path, "rb");
  if (f) {
    size_t got = fread(p, w, n, f);
    fclose(f);
    if (got != n) sk_fail("short input file");
  }
  return p;
}

static void sk_save(const char* dir, const char* name, const void* p, size_t n, size_t w) {
  char path[4096];
  snprintf(path, sizeof path, "%s/%s.out", dir, name);
  FILE* f = fopen(path, "wb");
  if (!f || fwrite(p, w, n, f) != n) sk_fail("cannot write output");
  fclose(f);
}

static volatile unsigned char sk_sink;

static void sk_flush(unsigned char* s, size_t n) {
  for (size_t i = 0; i < n; i += 64) s[i] = (unsigned char)(s[i] + 1);
  sk_sink = s[n / 2];
}

int main(int argc, char** argv) {
"#,
    );
    let np = p.params.len();
    writeln!(d, "  if (argc != {}) {{", 5 + np).unwrap();
    writeln!(d, "    fprintf(stderr, \"usage: %s <dir> <warmup> <repeats> <flush>{}\\n\", argv[0]);", " <param>".repeat(np))
        .unwrap();
    d.push_str("    return 2;\n  }\n");
    d.push_str("  const char* dir = argv[1];\n  long warmup = atol(argv[2]), repeats = atol(argv[3]);\n");
    d.push_str("  size_t flush_n = atol(argv[4]) ? (size_t)64 << 20 : 0;\n");
    d.push_str("  unsigned char* scratch = flush_n ? (unsigned char*)calloc(flush_n, 1) : NULL;\n");
    for (i, x) in p.params.iter().enumerate() {
        writeln!(d, "  int64_t {} = atoll(argv[{}]);", ident(x), 5 + i).unwrap();
    }
    for b in &p.buffers {
        let (n, t, len) = (ident(&b.name), c_type(b.dtype), buffer_len(p, &b.name)?);
        writeln!(d, "  {t}* {n} = ({t}*)sk_load(dir, \"{}\", {len}, sizeof({t}));", b.name).unwrap();
        if written.contains(&b.name) {
            writeln!(d, "  {t}* {n}_init = ({t}*)malloc(sizeof({t}) * {});", len.max(1)).unwrap();
            writeln!(d, "  memcpy({n}_init, {n}, sizeof({t}) * {len});").unwrap();
        }
    }
    let mut args: Vec<String> = p.buffers.iter().map(|b| ident(&b.name)).collect();
    args.extend(p.params.iter().map(|x| ident(x)));
    let call = format!("{}({});", ident(&p.name), args.join(", "));
    let mut reset = String::new();
    for b in p.buffers.iter().filter(|b| written.contains(&b.name)) {
        let n = ident(&b.name);
        writeln!(reset, "    memcpy({n}, {n}_init, sizeof({}) * {});", c_type(b.dtype), buffer_len(p, &b.name)?).unwrap();
    }
    writeln!(d, "  for (long r = 0; r < warmup + repeats; ++r) {{\n{reset}    if (scratch) sk_flush(scratch, flush_n);").unwrap();
    d.push_str("    struct timespec t0, t1;\n    clock_gettime(CLOCK_MONOTONIC, &t0);\n");
    writeln!(d, "    {call}").unwrap();
    d.push_str("    clock_gettime(CLOCK_MONOTONIC, &t1);\n");
    d.push_str("    if (r >= warmup) printf(\"%lld\\n\", (long long)(t1.tv_sec - t0.tv_sec) * 1000000000LL + (t1.tv_nsec - t0.tv_nsec));\n  }\n");
    writeln!(d, "{}  {call}", reset.replace("    ", "  ")).unwrap();
    for b in p.buffers.iter().filter(|b| written.contains(&b.name)) {
        let n = ident(&b.name);
        writeln!(d, "  sk_save(dir, \"{}\", {n}, {}, sizeof({}));", b.name, buffer_len(p, &b.name)?, c_type(b.dtype)).unwrap();
    }
    d.push_str("  return 0;\n}\n");
    Ok(format!("#define _POSIX_C_SOURCE 199309L\n{PRELUDE}#include <time.h>\n\n{kernel}{d}"))
}
