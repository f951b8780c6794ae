//! Symbolic representation of PDE systems.
//!
//! Expressions are plain trees over independent variables, dependent-variable
//! applications, derivatives and a small function library. A [`PdeSystem`]
//! bundles equations, boundary conditions, the domain box and declarations.

mod parser;
mod print;
mod specfile;
mod validate;

pub use parser::{parse_equation, parse_expression};
pub use specfile::parse_spec;
pub use validate::{validate_system, ValidationReport};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    /// Value, first and second derivative at `x`.
    pub fn eval3(self, x: f64) -> (f64, f64, f64) {
        match self {
            Func::Sin => {
                let (s, c) = x.sin_cos();
                (s, c, -s)
            }
            Func::Cos => {
                let (s, c) = x.sin_cos();
                (c, -s, -c)
            }
            Func::Exp => {
                let e = x.exp();
                (e, e, e)
            }
            Func::Log => (x.ln(), 1.0 / x, -1.0 / (x * x)),
            Func::Sqrt => {
                let r = x.sqrt();
                (r, 0.5 / r, -0.25 / (r * x))
            }
            Func::Sinh => (x.sinh(), x.cosh(), x.sinh()),
            Func::Cosh => (x.cosh(), x.sinh(), x.cosh()),
            Func::Tanh => {
                let t = x.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Func::Abs => (x.abs(), if x >= 0.0 { 1.0 } else { -1.0 }, 0.0),
        }
    }
}

/// One argument slot of a dependent-variable application.
#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    /// The declared independent variable for this slot, left free.
    Var(String),
    /// The slot's variable pinned to a constant.
    Pin(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Apply {
    pub dvar: String,
    pub args: Vec<Arg>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Ivar(String),
    Param(String),
    Apply(Apply),
    /// Pure derivative of a dependent-variable application, order 1 or 2.
    Derivative { app: Apply, var: String, order: u8 },
    /// Euclidean norm of the gradient of an application over `vars`.
    GradNorm { app: Apply, vars: Vec<String> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Neg(Box<Expr>),
    Func { func: Func, arg: Box<Expr> },
    /// Half-open intervals: the first branch whose breakpoint exceeds the
    /// selector wins, otherwise the fallback.
    Piecewise { selector: Box<Expr>, branches: Vec<(f64, Expr)>, otherwise: Box<Expr> },
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    /// Visit every node in pre-order.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            Expr::Neg(a) | Expr::Func { arg: a, .. } => a.walk(f),
            Expr::Piecewise { selector, branches, otherwise } => {
                selector.walk(f);
                for (_, b) in branches {
                    b.walk(f);
                }
                otherwise.walk(f);
            }
            _ => {}
        }
    }

    /// All dependent-variable applications, including those under derivatives.
    pub fn applications(&self) -> Vec<&Apply> {
        let mut out = Vec::new();
        self.walk(&mut |e| match e {
            Expr::Apply(a) | Expr::Derivative { app: a, .. } | Expr::GradNorm { app: a, .. } => out.push(a),
            _ => {}
        });
        out
    }

    /// Evaluate an expression that contains no variables.
    pub fn const_value(&self) -> Option<f64> {
        Some(match self {
            Expr::Const(c) => *c,
            Expr::Neg(a) => -a.const_value()?,
            Expr::Func { func, arg } => func.eval3(arg.const_value()?).0,
            Expr::Binary { op, lhs, rhs } => {
                let (a, b) = (lhs.const_value()?, rhs.const_value()?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                    BinOp::Max => a.max(b),
                    BinOp::Min => a.min(b),
                }
            }
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub lhs: Expr,
    pub rhs: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependentVar {
    pub name: String,
    /// Declared independent variables in system order.
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub var: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub default: f64,
}

/// Names that expressions may refer to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Declarations {
    pub ivars: Vec<String>,
    pub dvars: Vec<DependentVar>,
    pub params: Vec<String>,
}

impl Declarations {
    pub fn dvar(&self, name: &str) -> Option<&DependentVar> {
        self.dvars.iter().find(|d| d.name == name)
    }

    pub fn is_ivar(&self, name: &str) -> bool {
        self.ivars.iter().any(|v| v == name)
    }

    pub fn is_param(&self, name: &str) -> bool {
        self.params.iter().any(|v| v == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeSystem {
    pub equations: Vec<Equation>,
    pub bcs: Vec<Equation>,
    pub ivars: Vec<String>,
    pub dvars: Vec<DependentVar>,
    pub domains: Vec<Domain>,
    pub params: Vec<Param>,
}

impl PdeSystem {
    pub fn declarations(&self) -> Declarations {
        Declarations {
            ivars: self.ivars.clone(),
            dvars: self.dvars.clone(),
            params: self.params.iter().map(|p| p.name.clone()).collect(),
        }
    }

    pub fn ivar_index(&self, name: &str) -> Option<usize> {
        self.ivars.iter().position(|v| v == name)
    }

    pub fn dvar_index(&self, name: &str) -> Option<usize> {
        self.dvars.iter().position(|d| d.name == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Domain interval of an independent variable.
    pub fn domain(&self, var: &str) -> Option<(f64, f64)> {
        self.domains.iter().find(|d| d.var == var).map(|d| (d.lo, d.hi))
    }

    /// Domain bounds in declaration order. Panics if a domain is missing,
    /// which validation rules out.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.ivars.iter().map(|v| self.domain(v).expect("validated domain")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("undeclared name `{name}` at byte {offset}")]
    Undeclared { offset: usize, name: String },
    #[error("unsupported operator at byte {offset}: {message}")]
    Unsupported { offset: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: {message}")]
    Statement { line: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("no domain given for independent variable `{0}`")]
    MissingDomain(String),
    #[error("domain of `{var}` is empty or not finite: [{lo}, {hi}]")]
    BadDomain { var: String, lo: f64, hi: f64 },
    #[error("`{0}` is declared more than once")]
    Duplicate(String),
    #[error("`{name}` refers to nothing declared")]
    Unhoused { name: String },
    #[error("network for `{dvar}` takes {net} inputs but the variable has {args} arguments")]
    InputDim { dvar: String, net: usize, args: usize },
    #[error("network for `{dvar}` has {net} outputs, expected 1")]
    OutputDim { dvar: String, net: usize },
    #[error("expected {expected} network specs, got {got}")]
    NetCount { expected: usize, got: usize },
    #[error("application of `{dvar}` has {got} arguments, declared {expected}")]
    Arity { dvar: String, expected: usize, got: usize },
    #[error("argument {slot} of `{dvar}` must be `{expected}` or a constant, found `{found}`")]
    ArgOrder { dvar: String, slot: usize, expected: String, found: String },
    #[error("boundary condition {bc}: `{dvar}` is not pinned at any argument")]
    Unpinned { bc: usize, dvar: String },
    #[error("boundary condition {bc}: `{var}` pinned to {value}, which is not a domain endpoint")]
    PinNotEndpoint { bc: usize, var: String, value: f64 },
    #[error("derivative of order {order} is unsupported (only 1 and 2)")]
    Order { order: u8 },
    #[error("derivative of `{dvar}` with respect to `{var}`, which it does not depend on")]
    DerivVar { dvar: String, var: String },
}
