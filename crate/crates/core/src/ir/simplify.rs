//! Integer constant folding and a few algebraic identities.
//!
//! `FloorDiv` and `Mod` round toward negative infinity.

use std::collections::BTreeMap;

use super::visit::map_expr;
use super::{BinOp, CmpOp, Expr, Stmt};

pub fn floordiv(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

pub fn floormod(a: i64, b: i64) -> i64 {
    a - floordiv(a, b) * b
}

pub fn eval_binop(op: BinOp, a: i64, b: i64) -> Option<i64> {
    Some(match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::FloorDiv => {
            if b == 0 {
                return None;
            }
            floordiv(a, b)
        }
        BinOp::Mod => {
            if b == 0 {
                return None;
            }
            floormod(a, b)
        }
        BinOp::Min => a.min(b),
        BinOp::Max => a.max(b),
        BinOp::And => ((a != 0) && (b != 0)) as i64,
        BinOp::Or => ((a != 0) || (b != 0)) as i64,
    })
}

pub fn eval_cmp(op: CmpOp, a: i64, b: i64) -> bool {
    match op {
        CmpOp::Lt => a < b,
        CmpOp::Le => a <= b,
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Gt => a > b,
        CmpOp::Ge => a >= b,
    }
}

fn step(e: Expr) -> Expr {
    use BinOp::*;
    match e {
        Expr::Bin(op, a, b) => {
            if let (Some(x), Some(y)) = (a.as_int(), b.as_int()) {
                if let Some(v) = eval_binop(op, x, y) {
                    return Expr::Int(v);
                }
            }
            match (op, a.as_int(), b.as_int()) {
                (Add, Some(0), _) => return *b,
                (Add | Sub, _, Some(0)) => return *a,
                (Mul, Some(1), _) => return *b,
                (Mul | FloorDiv, _, Some(1)) => return *a,
                (Mul, Some(0), _) | (Mul, _, Some(0)) | (Mod, _, Some(1)) => return Expr::Int(0),
                (And, Some(0), _) | (And, _, Some(0)) => return Expr::Int(0),
                (Or, Some(x), _) | (Or, _, Some(x)) if x != 0 => return Expr::Int(1),
                (And, Some(_), _) if is_bool(&b) => return *b,
                (And, _, Some(_)) if is_bool(&a) => return *a,
                (Or, Some(0), _) if is_bool(&b) => return *b,
                (Or, _, Some(0)) if is_bool(&a) => return *a,
                _ => {}
            }
            if op == Sub && a == b {
                return Expr::Int(0);
            }
            // (x + c1) + c2 and (x - c1) + c2
            if let (Add | Sub, Some(c2)) = (op, b.as_int()) {
                let c2 = if op == Sub { -c2 } else { c2 };
                match *a {
                    Expr::Bin(Add, ref x, ref c1) if c1.as_int().is_some() => {
                        return step(Expr::bin(Add, (**x).clone(), Expr::Int(c1.as_int().unwrap() + c2)));
                    }
                    Expr::Bin(Sub, ref x, ref c1) if c1.as_int().is_some() => {
                        return step(Expr::bin(Add, (**x).clone(), Expr::Int(c2 - c1.as_int().unwrap())));
                    }
                    _ => {}
                }
                if c2 < 0 {
                    return Expr::bin(Sub, *a, Expr::Int(-c2));
                }
                if op == Sub {
                    return Expr::bin(Add, *a, Expr::Int(c2));
                }
            }
            // (x + y) - x
            if op == Sub {
                if let Expr::Bin(Add, ref x, ref y) = *a {
                    if **x == *b {
                        return (**y).clone();
                    }
                    if **y == *b {
                        return (**x).clone();
                    }
                }
            }
            Expr::Bin(op, a, b)
        }
        Expr::Cmp(op, a, b) => match (a.as_int(), b.as_int()) {
            (Some(x), Some(y)) => Expr::Int(eval_cmp(op, x, y) as i64),
            _ if *a == *b && !matches!(*a, Expr::Float(_)) => {
                Expr::Int(matches!(op, CmpOp::Le | CmpOp::Eq | CmpOp::Ge) as i64)
            }
            _ => Expr::Cmp(op, a, b),
        },
        Expr::Select(c, a, b) => match c.as_int() {
            Some(0) => *b,
            Some(_) => *a,
            None if a == b => *a,
            None => Expr::Select(c, a, b),
        },
        e => e,
    }
}

fn is_bool(e: &Expr) -> bool {
    match e {
        Expr::Cmp(..) => true,
        Expr::Int(v) => *v == 0 || *v == 1,
        Expr::Bin(BinOp::And | BinOp::Or, ..) => true,
        _ => false,
    }
}

pub fn simplify_expr(e: &Expr) -> Expr {
    map_expr(e, &mut step)
}

/// Simplifies every expression and drops statically dead branches.
pub fn simplify_stmt(s: &Stmt) -> Stmt {
    let s = super::visit::map_stmt_exprs(s, &mut simplify_expr);
    super::visit::map_stmts(&s, &mut |x| match x {
        Stmt::If { cond: Expr::Int(c), then, els } => {
            if c != 0 {
                *then
            } else {
                els.map(|e| *e).unwrap_or_else(Stmt::empty)
            }
        }
        Stmt::Seq(v) => Stmt::seq(v.into_iter().filter(|s| !matches!(s, Stmt::Seq(x) if x.is_empty())).collect()),
        x => x,
    })
}

/// Canonical form of an integer expression as a sum of scaled atoms plus a
/// constant, so that e.g. `(x * 4 + 3) - x * 4 + 1` becomes `4`.
pub fn normalize(e: &Expr) -> Expr {
    let mut terms: BTreeMap<String, (Expr, i64)> = BTreeMap::new();
    let mut konst = 0i64;
    linear(&simplify_expr(e), 1, &mut terms, &mut konst);
    let mut out: Option<Expr> = None;
    let mut neg: Vec<Expr> = Vec::new();
    for (_, (atom, c)) in terms {
        if c == 0 {
            continue;
        }
        let t = |k: i64| if k == 1 { atom.clone() } else { atom.clone().mul(Expr::Int(k)) };
        if c > 0 {
            out = Some(match out {
                None => t(c),
                Some(o) => o.add(t(c)),
            });
        } else {
            neg.push(t(-c));
        }
    }
    let mut out = out.unwrap_or(Expr::Int(0));
    for n in neg {
        out = out.sub(n);
    }
    simplify_expr(&out.add(Expr::Int(konst)))
}

fn linear(e: &Expr, scale: i64, terms: &mut BTreeMap<String, (Expr, i64)>, konst: &mut i64) {
    match e {
        Expr::Int(v) => *konst += scale * v,
        Expr::Bin(BinOp::Add, a, b) => {
            linear(a, scale, terms, konst);
            linear(b, scale, terms, konst);
        }
        Expr::Bin(BinOp::Sub, a, b) => {
            linear(a, scale, terms, konst);
            linear(b, -scale, terms, konst);
        }
        Expr::Bin(BinOp::Mul, a, b) if b.as_int().is_some() => {
            linear(a, scale * b.as_int().unwrap(), terms, konst)
        }
        Expr::Bin(BinOp::Mul, a, b) if a.as_int().is_some() => {
            linear(b, scale * a.as_int().unwrap(), terms, konst)
        }
        other => {
            let atom = normalize_children(other);
            let key = super::printer::print_expr(&atom);
            terms.entry(key).or_insert((atom, 0)).1 += scale;
        }
    }
}

fn normalize_children(e: &Expr) -> Expr {
    match e {
        Expr::Bin(op, a, b) => step(Expr::bin(*op, normalize(a), normalize(b))),
        Expr::Cmp(op, a, b) => step(Expr::cmp(*op, normalize(a), normalize(b))),
        Expr::Load(n, idx) => Expr::Load(n.clone(), idx.iter().map(normalize).collect()),
        Expr::Select(c, a, b) => step(Expr::select(normalize(c), normalize(a), normalize(b))),
        e => e.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_semantics() {
        assert_eq!(floordiv(-7, 2), -4);
        assert_eq!(floormod(-7, 2), 1);
        assert_eq!(floordiv(7, 2), 3);
        assert_eq!(floormod(7, -2), -1);
    }

    #[test]
    fn folds() {
        let x = Expr::var("x");
        assert_eq!(simplify_expr(&x.clone().add(Expr::int(0))), x);
        assert_eq!(simplify_expr(&x.clone().mul(Expr::int(0))), Expr::int(0));
        assert_eq!(simplify_expr(&Expr::int(3).mul(Expr::int(4))), Expr::int(12));
        assert_eq!(
            simplify_expr(&x.clone().add(Expr::int(1)).sub(Expr::int(1))),
            x
        );
        let y = Expr::var("y");
        assert_eq!(simplify_expr(&x.clone().add(y.clone()).sub(x.clone())), y);
        assert_eq!(simplify_expr(&Expr::int(1).and(x.clone().lt(y))), Expr::var("x").lt(Expr::var("y")));
    }

    #[test]
    fn normalize_cancels_atoms() {
        let l = Expr::load("P", vec![Expr::var("i")]);
        let hi = l.clone().mul(Expr::int(4)).add(Expr::int(3));
        let lo = Expr::int(0).add(l.clone().mul(Expr::int(4)));
        assert_eq!(normalize(&hi.sub(lo).add(Expr::int(1))), Expr::int(4));
        let x = Expr::var("x");
        assert_eq!(normalize(&x.clone().add(x.clone()).sub(Expr::int(2).mul(x))), Expr::int(0));
    }
}
