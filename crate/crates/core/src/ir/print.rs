//! Pretty printer. Output re-parses to the same tree.

use super::{Apply, Arg, BinOp, Equation, Expr};
use std::fmt::{self, Display, Formatter};

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op: BinOp::Add | BinOp::Sub, .. } => PREC_ADD,
        Expr::Binary { op: BinOp::Mul | BinOp::Div, .. } => PREC_MUL,
        Expr::Binary { op: BinOp::Pow, .. } => PREC_POW,
        Expr::Neg(_) => PREC_NEG,
        // A negative literal can only be re-read through unary minus.
        Expr::Const(c) if c.is_sign_negative() => PREC_NEG,
        _ => PREC_ATOM,
    }
}

fn number(f: &mut Formatter<'_>, v: f64) -> fmt::Result {
    if v.is_sign_negative() {
        write!(f, "-{}", -v)
    } else {
        write!(f, "{v}")
    }
}

fn wrapped(f: &mut Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl Display for Apply {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.dvar)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            match a {
                Arg::Var(v) => write!(f, "{v}")?,
                Arg::Pin(p) => number(f, *p)?,
            }
        }
        write!(f, ")")
    }
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => number(f, *c),
            Expr::Ivar(n) | Expr::Param(n) => write!(f, "{n}"),
            Expr::Apply(a) => write!(f, "{a}"),
            Expr::Derivative { app, var, order } => {
                write!(f, "D")?;
                for _ in 0..*order {
                    write!(f, "{var}")?;
                }
                write!(f, "({app})")
            }
            Expr::GradNorm { app, vars } => {
                write!(f, "norm(grad({app}")?;
                for v in vars {
                    write!(f, ", {v}")?;
                }
                write!(f, "))")
            }
            Expr::Neg(a) => {
                write!(f, "-")?;
                wrapped(f, a, prec(a) < PREC_NEG)
            }
            Expr::Func { func, arg } => write!(f, "{}({arg})", func.name()),
            Expr::Binary { op: op @ (BinOp::Max | BinOp::Min), lhs, rhs } => {
                let name = if *op == BinOp::Max { "max" } else { "min" };
                write!(f, "{name}({lhs}, {rhs})")
            }
            Expr::Binary { op: BinOp::Pow, lhs, rhs } => {
                wrapped(f, lhs, prec(lhs) < PREC_POW)?;
                write!(f, "^")?;
                wrapped(f, rhs, prec(rhs) < PREC_ATOM)
            }
            Expr::Binary { op, lhs, rhs } => {
                let (p, sym) = match op {
                    BinOp::Add => (PREC_ADD, " + "),
                    BinOp::Sub => (PREC_ADD, " - "),
                    BinOp::Mul => (PREC_MUL, "*"),
                    _ => (PREC_MUL, "/"),
                };
                wrapped(f, lhs, prec(lhs) < p)?;
                write!(f, "{sym}")?;
                wrapped(f, rhs, prec(rhs) <= p)
            }
            Expr::Piecewise { selector, branches, otherwise } => {
                write!(f, "piecewise({selector};")?;
                for (bp, v) in branches {
                    write!(f, " ")?;
                    number(f, *bp)?;
                    write!(f, ": {v},")?;
                }
                write!(f, " else: {otherwise})")
            }
        }
    }
}

impl Display for Equation {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.lhs, self.rhs)
    }
}
