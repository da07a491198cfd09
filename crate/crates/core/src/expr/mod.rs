//! A small expression language for metric entries, vector-field components
//! and perturbations supplied as strings.
//!
//! Grammar: numbers, the coordinates `x1..xn`, time `t`, the constant `pi`,
//! named parameters, `+ - * / ^`, unary minus, parentheses and the functions
//! `sin cos tan exp log sqrt abs tanh pow`. `^` binds tightest and is
//! right-associative, then unary minus, then `* /`, then `+ -`.
//!
//! Parsed trees are evaluated either directly ([`Expr::eval`],
//! [`Expr::eval_flagged`], [`Expr::eval_dual`]) or after binding parameters
//! into a flat instruction tape ([`CompiledExpr`]) for the inner loops of the
//! integrators. Both paths perform the same floating point operations in the
//! same order and agree bit for bit.

mod compiled;
mod parser;
mod scalar;

use std::collections::BTreeMap;
use std::fmt;

pub use compiled::CompiledExpr;
pub use scalar::{Dual, Scalar};

/// Named parameter values bound at evaluation time.
pub type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at byte {offset}: found {found}, expected one of: {}", expected.join(", "))]
    Syntax {
        offset: usize,
        found: String,
        expected: Vec<String>,
    },
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("variable x{} used but the chart has dimension {dim}", index + 1)]
    VariableOutOfRange { index: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
    Pow,
}

impl Func {
    pub const ALL: [Func; 9] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
        Func::Tanh,
        Func::Pow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Pow => "pow",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }

    pub fn arity(self) -> usize {
        if self == Func::Pow {
            2
        } else {
            1
        }
    }

    fn apply1<S: Scalar>(self, a: S) -> S {
        match self {
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Tan => a.tan(),
            Func::Exp => a.exp(),
            Func::Log => a.ln(),
            Func::Sqrt => a.sqrt(),
            Func::Abs => a.abs(),
            Func::Tanh => a.tanh(),
            Func::Pow => unreachable!("pow is binary"),
        }
    }
}

/// Expression tree. Coordinates are stored zero-based: `x1` is `Var(0)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Time,
    Param(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Coordinates, time and parameter bindings for one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub coords: &'a [f64],
    pub time: f64,
    pub params: &'a Params,
}

impl<'a> EvalContext<'a> {
    pub fn new(coords: &'a [f64], time: f64, params: &'a Params) -> Self {
        Self { coords, time, params }
    }
}

/// Result of [`Expr::eval_flagged`]: the value plus the innermost
/// sub-expression that first produced a non-finite number, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub non_finite_at: Option<String>,
}

/// Integer exponents at or below this magnitude use repeated multiplication.
const MAX_INT_EXPONENT: f64 = 1024.0;

#[inline]
pub(crate) fn pow_scalar<S: Scalar>(base: S, exponent: S, int_exponent: Option<i32>) -> S {
    match int_exponent {
        Some(n) => base.powi(n),
        None => base.powf(exponent),
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        parser::parse(src)
    }

    /// True when the tree references neither coordinates, time nor parameters.
    pub fn is_literal(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var(_) | Expr::Time | Expr::Param(_) => false,
            Expr::Neg(a) => a.is_literal(),
            Expr::Binary(_, a, b) => a.is_literal() && b.is_literal(),
            Expr::Call(_, args) => args.iter().all(Expr::is_literal),
        }
    }

    pub fn uses_time(&self) -> bool {
        match self {
            Expr::Time => true,
            Expr::Num(_) | Expr::Var(_) | Expr::Param(_) => false,
            Expr::Neg(a) => a.uses_time(),
            Expr::Binary(_, a, b) => a.uses_time() || b.uses_time(),
            Expr::Call(_, args) => args.iter().any(Expr::uses_time),
        }
    }

    /// Largest coordinate index referenced, one-based (0 when none).
    pub fn max_variable(&self) -> usize {
        match self {
            Expr::Var(i) => i + 1,
            Expr::Num(_) | Expr::Time | Expr::Param(_) => 0,
            Expr::Neg(a) => a.max_variable(),
            Expr::Binary(_, a, b) => a.max_variable().max(b.max_variable()),
            Expr::Call(_, args) => args.iter().map(Expr::max_variable).max().unwrap_or(0),
        }
    }

    pub fn parameters(&self) -> Vec<String> {
        fn collect(e: &Expr, out: &mut Vec<String>) {
            match e {
                Expr::Param(p) => {
                    if !out.contains(p) {
                        out.push(p.clone());
                    }
                }
                Expr::Num(_) | Expr::Var(_) | Expr::Time => {}
                Expr::Neg(a) => collect(a, out),
                Expr::Binary(_, a, b) => {
                    collect(a, out);
                    collect(b, out);
                }
                Expr::Call(_, args) => args.iter().for_each(|a| collect(a, out)),
            }
        }
        let mut out = Vec::new();
        collect(self, &mut out);
        out
    }

    /// Exponent value when it is a literal integer of moderate size.
    pub(crate) fn literal_int_exponent(&self) -> Option<i32> {
        if !self.is_literal() {
            return None;
        }
        let empty = Params::new();
        let v: f64 = self.walk(&[], 0.0, &empty, &mut None).ok()?;
        (v.fract() == 0.0 && v.abs() <= MAX_INT_EXPONENT).then_some(v as i32)
    }

    fn walk<S: Scalar>(&self, vars: &[S], time: S, params: &Params, flag: &mut Option<String>) -> Result<S, ExprError> {
        let (value, children_finite) = match self {
            Expr::Num(v) => (S::constant(*v), true),
            Expr::Var(i) => (
                *vars.get(*i).ok_or(ExprError::VariableOutOfRange {
                    index: *i,
                    dim: vars.len(),
                })?,
                true,
            ),
            Expr::Time => (time, true),
            Expr::Param(p) => (
                S::constant(*params.get(p).ok_or_else(|| ExprError::Unbound(p.clone()))?),
                true,
            ),
            Expr::Neg(a) => {
                let a = a.walk(vars, time, params, flag)?;
                (-a, a.is_finite())
            }
            Expr::Binary(op, a, b) => {
                let x = a.walk(vars, time, params, flag)?;
                let y = b.walk(vars, time, params, flag)?;
                let v = match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => pow_scalar(x, y, b.literal_int_exponent()),
                };
                (v, x.is_finite() && y.is_finite())
            }
            Expr::Call(Func::Pow, args) => {
                let x = args[0].walk(vars, time, params, flag)?;
                let y = args[1].walk(vars, time, params, flag)?;
                (
                    pow_scalar(x, y, args[1].literal_int_exponent()),
                    x.is_finite() && y.is_finite(),
                )
            }
            Expr::Call(f, args) => {
                let x = args[0].walk(vars, time, params, flag)?;
                (f.apply1(x), x.is_finite())
            }
        };
        if flag.is_none() && children_finite && !value.is_finite() {
            *flag = Some(self.to_string());
        }
        Ok(value)
    }

    /// Plain evaluation; non-finite values propagate silently.
    pub fn eval(&self, ctx: &EvalContext) -> Result<f64, ExprError> {
        self.walk(ctx.coords, ctx.time, ctx.params, &mut None)
    }

    /// Evaluation that also reports where a non-finite value first arose.
    pub fn eval_flagged(&self, ctx: &EvalContext) -> Result<Evaluation, ExprError> {
        let mut flag = None;
        let value = self.walk(ctx.coords, ctx.time, ctx.params, &mut flag)?;
        Ok(Evaluation {
            value,
            non_finite_at: flag,
        })
    }

    /// Value and directional derivative along `seed` in coordinate space.
    pub fn eval_dual(&self, ctx: &EvalContext, seed: &[f64]) -> Result<(f64, f64), ExprError> {
        self.eval_dual_spacetime(ctx, seed, 0.0)
    }

    /// Value and derivative along the space-time direction `(seed, time_seed)`.
    pub fn eval_dual_spacetime(
        &self,
        ctx: &EvalContext,
        seed: &[f64],
        time_seed: f64,
    ) -> Result<(f64, f64), ExprError> {
        let vars: Vec<Dual> = ctx
            .coords
            .iter()
            .enumerate()
            .map(|(i, &x)| Dual::new(x, seed.get(i).copied().unwrap_or(0.0)))
            .collect();
        let d = self.walk(&vars, Dual::new(ctx.time, time_seed), ctx.params, &mut None)?;
        Ok((d.re, d.eps))
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Num(v) if v.is_sign_negative() => 3,
            Expr::Binary(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let paren = self.prec() < min_prec;
        if paren {
            f.write_str("(")?;
        }
        match self {
            Expr::Num(v) => write!(f, "{v}")?,
            Expr::Var(i) => write!(f, "x{}", i + 1)?,
            Expr::Time => f.write_str("t")?,
            Expr::Param(p) => f.write_str(p)?,
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.fmt_at(f, 3)?;
            }
            Expr::Binary(op, a, b) => {
                let (sym, lp, rp) = match op {
                    BinOp::Add => (" + ", 1, 2),
                    BinOp::Sub => (" - ", 1, 2),
                    BinOp::Mul => (" * ", 2, 3),
                    BinOp::Div => (" / ", 2, 3),
                    BinOp::Pow => ("^", 5, 3),
                };
                a.fmt_at(f, lp)?;
                f.write_str(sym)?;
                b.fmt_at(f, rp)?;
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    a.fmt_at(f, 0)?;
                }
                f.write_str(")")?;
            }
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Canonical form: minimal parentheses, single spaces around `+ - * /`.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}
