//! Parser for the textual IR, with line:column diagnostics.

use std::collections::{BTreeMap, BTreeSet};

use crate::axes::{Axis, AxisKind, IndexDType};
use crate::error::{Error, Result};
use crate::storage::ValueDType;

use super::{
    Annotation, BinOp, Binding, Block, BufferDecl, BufferRole, CmpOp, Expr, IterKind, Layout,
    Loop, Program, Region, SearchBlock, SearchMode, SpIterKind, SpIterator, SparseIteration,
    Stage, Stmt,
};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Punct(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const PUNCTS: [&str; 27] = [
    "->", "+=", "//", "&&", "||", "<=", ">=", "==", "!=", "{", "}", "[", "]", "(", ")", ",", ";",
    ":", "=", "+", "-", "*", "%", "<", ">", "@", ".",
];

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start, scol) = (i, col);
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() {
            let mut float = false;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '-' || chars[j] == '+') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    float = true;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let bad = Error::Parse { line, col: scol, msg: format!("bad number `{text}`") };
            if float {
                Tok::Float(text.parse().map_err(|_| bad)?)
            } else {
                Tok::Int(text.parse().map_err(|_| bad)?)
            }
        } else if c == '"' {
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => {
                        return Err(Error::Parse { line, col: scol, msg: "unterminated string".into() })
                    }
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some(&x) => s.push(x),
                            None => {}
                        }
                        i += 2;
                    }
                    Some(&x) => {
                        s.push(x);
                        i += 1;
                    }
                }
            }
            Tok::Str(s)
        } else {
            let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let p = PUNCTS
                .iter()
                .find(|p| rest.starts_with(**p))
                .ok_or_else(|| Error::Parse { line, col, msg: format!("unexpected character `{c}`") })?;
            i += p.len();
            Tok::Punct(p)
        };
        col += i - start;
        out.push(Token { tok, line, col: scol });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    stage: Stage,
    axes: BTreeSet<String>,
    buffers: BTreeMap<String, usize>,
    locals: Vec<String>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let t = &self.toks[self.pos];
        Err(Error::Parse { line: t.line, col: t.col, msg: msg.into() })
    }

    fn err_at<T>(&self, at: usize, msg: impl Into<String>) -> Result<T> {
        let t = &self.toks[at];
        Err(Error::Parse { line: t.line, col: t.col, msg: msg.into() })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(q) if q == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        if self.is_kw(k) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected `{p}`, found {}", describe(self.peek())))
        }
    }

    fn expect_kw(&mut self, k: &str) -> Result<()> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            self.err(format!("expected `{k}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected identifier, found {}", describe(&t))),
        }
    }

    fn uint(&mut self) -> Result<usize> {
        match self.peek().clone() {
            Tok::Int(v) if v >= 0 => {
                self.bump();
                Ok(v as usize)
            }
            t => self.err(format!("expected non-negative integer, found {}", describe(&t))),
        }
    }

    fn int(&mut self) -> Result<i64> {
        let neg = self.eat_punct("-");
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            t => self.err(format!("expected integer, found {}", describe(&t))),
        }
    }

    fn string(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected string, found {}", describe(&t))),
        }
    }

    fn axis_ref(&mut self) -> Result<String> {
        let at = self.pos;
        let name = self.ident()?;
        if !self.axes.contains(&name) {
            return self.err_at(at, format!("unknown axis `{name}`"));
        }
        Ok(name)
    }

    fn buffer_ref(&mut self) -> Result<String> {
        let at = self.pos;
        let name = self.ident()?;
        if !self.buffers.contains_key(&name) && !self.locals.contains(&name) {
            return self.err_at(at, format!("unknown buffer `{name}`"));
        }
        Ok(name)
    }

    fn require_stage(&self, at: usize, what: &str, allowed: &[Stage]) -> Result<()> {
        if allowed.contains(&self.stage) {
            Ok(())
        } else {
            self.err_at(at, format!("{what} not allowed in a stage {} program", self.stage))
        }
    }

    fn dtype(&mut self) -> Result<ValueDType> {
        let at = self.pos;
        let k = self.ident()?;
        ValueDType::from_keyword(&k).map_or_else(|| self.err_at(at, format!("unknown dtype `{k}`")), Ok)
    }

    fn program(&mut self) -> Result<Program> {
        self.expect_kw("program")?;
        let name = self.ident()?;
        self.expect_kw("stage")?;
        let at = self.pos;
        self.stage = match self.ident()?.as_str() {
            "I" => Stage::I,
            "II" => Stage::II,
            "III" => Stage::III,
            s => return self.err_at(at, format!("unknown stage `{s}`")),
        };
        let mut p = Program::new(&name, self.stage);
        self.expect_punct("{")?;
        loop {
            if self.eat_kw("param") {
                p.params.push(self.ident()?);
                self.expect_punct(";")?;
            } else if self.is_kw("axis") {
                let at = self.pos;
                self.bump();
                let a = self.axis_decl()?;
                if !self.axes.insert(a.name.clone()) {
                    return self.err_at(at, format!("duplicate axis `{}`", a.name));
                }
                p.axes.push(a);
            } else if self.is_kw("buffer") {
                let at = self.pos;
                self.bump();
                let b = self.buffer_decl()?;
                if self.buffers.insert(b.name.clone(), b.ndim()).is_some() {
                    return self.err_at(at, format!("duplicate buffer `{}`", b.name));
                }
                p.buffers.push(b);
            } else {
                break;
            }
        }
        self.expect_kw("body")?;
        p.body = self.block_body()?;
        self.expect_punct("}")?;
        if *self.peek() != Tok::Eof {
            return self.err("trailing input after program");
        }
        Ok(p)
    }

    fn axis_decl(&mut self) -> Result<Axis> {
        let name = self.ident()?;
        let at = self.pos;
        let kw = self.ident()?;
        let kind = AxisKind::from_keyword(&kw)
            .map_or_else(|| self.err_at(at, format!("unknown axis kind `{kw}`")), Ok)?;
        let mut a = Axis {
            name,
            kind,
            parent: None,
            length: 0,
            nnz: None,
            nnz_cols: None,
            indptr: None,
            indices: None,
            index_dtype: IndexDType::I32,
        };
        while !self.eat_punct(";") {
            let at = self.pos;
            match self.ident()?.as_str() {
                "parent" => a.parent = Some(self.axis_ref()?),
                "length" => a.length = self.uint()?,
                "nnz" => a.nnz = Some(self.uint()?),
                "nnz_cols" => a.nnz_cols = Some(self.uint()?),
                "indptr" => a.indptr = Some(self.ident()?),
                "indices" => a.indices = Some(self.ident()?),
                f => return self.err_at(at, format!("unknown axis field `{f}`")),
            }
        }
        Ok(a)
    }

    fn buffer_decl(&mut self) -> Result<BufferDecl> {
        let name = self.ident()?;
        let dtype = self.dtype()?;
        let at = self.pos;
        let layout = match self.ident()?.as_str() {
            "sparse" => {
                self.expect_punct("[")?;
                let mut axes = Vec::new();
                while !self.eat_punct("]") {
                    if !axes.is_empty() {
                        self.expect_punct(",")?;
                    }
                    axes.push(self.axis_ref()?);
                }
                Layout::Sparse(axes)
            }
            "dense" => {
                self.expect_punct("[")?;
                let mut shape = Vec::new();
                while !self.eat_punct("]") {
                    if !shape.is_empty() {
                        self.expect_punct(",")?;
                    }
                    shape.push(self.uint()?);
                }
                Layout::Dense(shape)
            }
            l => return self.err_at(at, format!("unknown layout `{l}`")),
        };
        let mut b = BufferDecl { name, dtype, layout, role: BufferRole::Data, hint: None };
        while !self.eat_punct(";") {
            let at = self.pos;
            match self.ident()?.as_str() {
                "indptr" => b.role = BufferRole::Indptr,
                "indices" => b.role = BufferRole::Indices,
                "hint" => {
                    self.expect_punct("[")?;
                    let lo = self.int()?;
                    self.expect_punct(",")?;
                    let hi = self.int()?;
                    self.expect_punct("]")?;
                    b.hint = Some((lo, hi));
                }
                f => return self.err_at(at, format!("unknown buffer field `{f}`")),
            }
        }
        Ok(b)
    }

    /// `{ stmt* }`
    fn block_body(&mut self) -> Result<Stmt> {
        self.expect_punct("{")?;
        let mut stmts = Vec::new();
        while !self.eat_punct("}") {
            stmts.push(self.stmt()?);
        }
        Ok(if stmts.len() == 1 { stmts.pop().unwrap() } else { Stmt::Seq(stmts) })
    }

    fn stmt(&mut self) -> Result<Stmt> {
        let at = self.pos;
        let kw = match self.peek() {
            Tok::Ident(s) => s.clone(),
            t => return self.err(format!("expected statement, found {}", describe(t))),
        };
        let next_is_bracket = matches!(self.peek_at(1), Tok::Punct("["));
        if next_is_bracket {
            return self.store();
        }
        match kw.as_str() {
            "sp_iter" => {
                self.require_stage(at, "sparse iteration", &[Stage::I])?;
                self.bump();
                self.sp_iter()
            }
            "for" => {
                self.require_stage(at, "loop", &[Stage::II, Stage::III])?;
                self.bump();
                let var = self.ident()?;
                self.expect_punct("<")?;
                let extent = self.expr()?;
                let mut annotations = Vec::new();
                while self.eat_punct("@") {
                    let at = self.pos;
                    let a = match self.ident()?.as_str() {
                        "parallel" => Annotation::Parallel,
                        "unroll" => Annotation::Unroll(self.paren_u32()?),
                        "vectorize" => Annotation::Vectorize(self.paren_u32()?),
                        a => return self.err_at(at, format!("unknown annotation `{a}`")),
                    };
                    annotations.push(a);
                }
                let body = Box::new(self.block_body()?);
                Ok(Stmt::Loop(Loop { var, extent, annotations, body }))
            }
            "block" => {
                self.require_stage(at, "block", &[Stage::II, Stage::III])?;
                self.bump();
                self.block()
            }
            "search" => {
                self.require_stage(at, "binary search block", &[Stage::II, Stage::III])?;
                self.bump();
                let name = self.ident()?;
                let mat = self.pos;
                let mode = match self.ident()?.as_str() {
                    "find" => SearchMode::Find,
                    "upper" => SearchMode::Upper,
                    m => return self.err_at(mat, format!("unknown search mode `{m}`")),
                };
                let array = self.buffer_ref()?;
                self.expect_punct("(")?;
                let lo = self.expr()?;
                self.expect_punct(",")?;
                let hi = self.expr()?;
                self.expect_punct(")")?;
                self.expect_kw("key")?;
                let key = self.expr()?;
                self.expect_punct("->")?;
                self.expect_punct("(")?;
                let result = self.ident()?;
                self.expect_punct(",")?;
                let found = self.ident()?;
                self.expect_punct(")")?;
                let body = Box::new(self.block_body()?);
                Ok(Stmt::Search(SearchBlock { name, mode, array, lo, hi, key, result, found, body }))
            }
            "if" => {
                self.bump();
                let cond = self.expr()?;
                let then = Box::new(self.block_body()?);
                let els = if self.eat_kw("else") { Some(Box::new(self.block_body()?)) } else { None };
                Ok(Stmt::If { cond, then, els })
            }
            "let" => {
                self.bump();
                let var = self.ident()?;
                self.expect_punct("=")?;
                let value = self.expr()?;
                self.expect_kw("in")?;
                let body = Box::new(self.block_body()?);
                Ok(Stmt::Let { var, value, body })
            }
            "while" => {
                self.require_stage(at, "while loop", &[Stage::III])?;
                self.bump();
                let cond = self.expr()?;
                let body = Box::new(self.block_body()?);
                Ok(Stmt::While { cond, body })
            }
            "alloc" => {
                self.require_stage(at, "local allocation", &[Stage::II, Stage::III])?;
                self.bump();
                let buffer = self.ident()?;
                let dtype = self.dtype()?;
                self.expect_punct("[")?;
                let size = self.uint()?;
                self.expect_punct("]")?;
                self.locals.push(buffer.clone());
                let body = self.block_body();
                self.locals.pop();
                Ok(Stmt::Alloc { buffer, dtype, size, body: Box::new(body?) })
            }
            "assert" => {
                self.bump();
                let cond = self.expr()?;
                let msg = self.string()?;
                self.expect_punct(";")?;
                Ok(Stmt::Assert { cond, msg })
            }
            k => self.err(format!("unknown statement `{k}`")),
        }
    }

    fn paren_u32(&mut self) -> Result<u32> {
        self.expect_punct("(")?;
        let v = self.uint()? as u32;
        self.expect_punct(")")?;
        Ok(v)
    }

    fn store(&mut self) -> Result<Stmt> {
        let buffer = self.buffer_ref()?;
        let indices = self.index_list()?;
        let reduce = if self.eat_punct("+=") {
            true
        } else {
            self.expect_punct("=")?;
            false
        };
        let value = self.expr()?;
        self.expect_punct(";")?;
        Ok(Stmt::Store { buffer, indices, value, reduce })
    }

    fn iter_kind(&mut self) -> Result<IterKind> {
        let at = self.pos;
        match self.ident()?.as_str() {
            "S" => Ok(IterKind::Spatial),
            "R" => Ok(IterKind::Reduction),
            k => self.err_at(at, format!("iterator kind must be S or R, found `{k}`")),
        }
    }

    fn sp_iter(&mut self) -> Result<Stmt> {
        let name = self.ident()?;
        let at = self.pos;
        let kind = match self.ident()?.as_str() {
            "compute" => SpIterKind::Compute,
            "copy" => SpIterKind::Copy { target: self.buffer_ref()? },
            k => return self.err_at(at, format!("expected `compute` or `copy`, found `{k}`")),
        };
        self.expect_punct("[")?;
        let mut iterators = Vec::new();
        while !self.eat_punct("]") {
            if !iterators.is_empty() {
                self.expect_punct(",")?;
            }
            if self.eat_punct("(") {
                let mut vars = vec![self.ident()?];
                while self.eat_punct(",") {
                    vars.push(self.ident()?);
                }
                self.expect_punct(")")?;
                self.expect_punct(":")?;
                self.expect_punct("(")?;
                let mut axes = vec![self.axis_ref()?];
                while self.eat_punct(",") {
                    axes.push(self.axis_ref()?);
                }
                self.expect_punct(")")?;
                if axes.len() != vars.len() {
                    return self.err("fused iterator needs one variable per axis");
                }
                let kind = self.iter_kind()?;
                iterators.push(SpIterator { axes, vars, kind });
            } else {
                let var = self.ident()?;
                self.expect_punct(":")?;
                let axis = self.axis_ref()?;
                let kind = self.iter_kind()?;
                iterators.push(SpIterator { axes: vec![axis], vars: vec![var], kind });
            }
        }
        let body = Box::new(self.block_body()?);
        Ok(Stmt::SpIter(SparseIteration { name, kind, iterators, body }))
    }

    fn block(&mut self) -> Result<Stmt> {
        let name = self.ident()?;
        self.expect_punct("{")?;
        let mut b = Block::new(&name, Vec::new(), Stmt::empty());
        let mut has_body = false;
        while !self.eat_punct("}") {
            let at = self.pos;
            match self.ident()?.as_str() {
                "bind" => {
                    let var = self.ident()?;
                    let kind = self.iter_kind()?;
                    self.expect_punct("=")?;
                    let value = self.expr()?;
                    self.expect_punct(";")?;
                    b.bindings.push(Binding { var, kind, value });
                }
                kw @ ("read" | "write") => {
                    let write = kw == "write";
                    let buffer = self.buffer_ref()?;
                    self.expect_punct("[")?;
                    let mut ranges = Vec::new();
                    while !self.eat_punct("]") {
                        if !ranges.is_empty() {
                            self.expect_punct(",")?;
                        }
                        let lo = self.expr()?;
                        self.expect_punct(":")?;
                        let ext = self.expr()?;
                        ranges.push((lo, ext));
                    }
                    self.expect_punct(";")?;
                    let r = Region { buffer, ranges };
                    if write {
                        b.writes.push(r);
                    } else {
                        b.reads.push(r);
                    }
                }
                "attr" => {
                    // keys may be dotted, e.g. `sparse.copy`
                    let mut k = self.ident()?;
                    while self.eat_punct(".") {
                        k.push('.');
                        k.push_str(&self.ident()?);
                    }
                    let v = self.string()?;
                    self.expect_punct(";")?;
                    b.attrs.insert(k, v);
                }
                "init" => b.init = Some(Box::new(self.block_body()?)),
                "body" => {
                    b.body = Box::new(self.block_body()?);
                    has_body = true;
                }
                f => return self.err_at(at, format!("unknown block clause `{f}`")),
            }
        }
        if !has_body {
            return self.err(format!("block `{name}` has no body"));
        }
        Ok(Stmt::Block(b))
    }

    fn index_list(&mut self) -> Result<Vec<Expr>> {
        self.expect_punct("[")?;
        let mut idx = Vec::new();
        while !self.eat_punct("]") {
            if !idx.is_empty() {
                self.expect_punct(",")?;
            }
            idx.push(self.expr()?);
        }
        Ok(idx)
    }

    fn expr(&mut self) -> Result<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Float(v))
            }
            Tok::Punct("-") => {
                self.bump();
                match self.bump() {
                    Tok::Int(v) => Ok(Expr::Int(-v)),
                    Tok::Float(v) => Ok(Expr::Float(-v)),
                    _ => {
                        self.pos -= 1;
                        self.err("expected number after `-`")
                    }
                }
            }
            Tok::Punct("(") => {
                self.bump();
                let a = self.expr()?;
                let at = self.pos;
                let op = match self.bump() {
                    Tok::Punct(p) => p,
                    t => return self.err_at(at, format!("expected operator, found {}", describe(&t))),
                };
                let b = self.expr()?;
                self.expect_punct(")")?;
                let bin = |o| Ok(Expr::bin(o, a.clone(), b.clone()));
                let cmp = |o| Ok(Expr::cmp(o, a.clone(), b.clone()));
                match op {
                    "+" => bin(BinOp::Add),
                    "-" => bin(BinOp::Sub),
                    "*" => bin(BinOp::Mul),
                    "//" => bin(BinOp::FloorDiv),
                    "%" => bin(BinOp::Mod),
                    "&&" => bin(BinOp::And),
                    "||" => bin(BinOp::Or),
                    "<" => cmp(CmpOp::Lt),
                    "<=" => cmp(CmpOp::Le),
                    "==" => cmp(CmpOp::Eq),
                    "!=" => cmp(CmpOp::Ne),
                    ">" => cmp(CmpOp::Gt),
                    ">=" => cmp(CmpOp::Ge),
                    o => self.err_at(at, format!("unknown operator `{o}`")),
                }
            }
            Tok::Ident(name) => {
                let call = matches!(self.peek_at(1), Tok::Punct("("));
                let index = matches!(self.peek_at(1), Tok::Punct("["));
                if call && matches!(name.as_str(), "min" | "max" | "select") {
                    self.bump();
                    self.expect_punct("(")?;
                    let mut args = vec![self.expr()?];
                    while self.eat_punct(",") {
                        args.push(self.expr()?);
                    }
                    self.expect_punct(")")?;
                    return match (name.as_str(), args.len()) {
                        ("min", 2) => Ok(Expr::bin(BinOp::Min, args[0].clone(), args[1].clone())),
                        ("max", 2) => Ok(Expr::bin(BinOp::Max, args[0].clone(), args[1].clone())),
                        ("select", 3) => {
                            let mut a = args.into_iter();
                            Ok(Expr::select(a.next().unwrap(), a.next().unwrap(), a.next().unwrap()))
                        }
                        _ => self.err(format!("wrong argument count for `{name}`")),
                    };
                }
                if index {
                    let buf = self.buffer_ref()?;
                    let idx = self.index_list()?;
                    return Ok(Expr::Load(buf, idx));
                }
                self.bump();
                Ok(Expr::Var(name))
            }
            t => self.err(format!("expected expression, found {}", describe(&t))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Float(v) => format!("`{v}`"),
        Tok::Str(s) => format!("{s:?}"),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses the textual IR, then runs name and stage validation.
pub fn parse(src: &str) -> Result<Program> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        stage: Stage::I,
        axes: BTreeSet::new(),
        buffers: BTreeMap::new(),
        locals: Vec::new(),
    };
    let prog = p.program()?;
    super::validate(&prog).map_err(|errs| Error::Parse { line: 0, col: 0, msg: errs.join("; ") })?;
    Ok(prog)
}
