use super::{pow_scalar, BinOp, Dual, Expr, ExprError, Func, Params, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Time,
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    PowI(i32),
    Pow,
    Call(Func),
}

const INLINE_STACK: usize = 16;

/// An expression with its parameters bound, flattened to a postfix tape.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    source: String,
    dim: usize,
    uses_coords: bool,
    uses_time: bool,
    /// Largest stack height the tape reaches.
    depth: usize,
    /// Value of a tape that is a single constant.
    constant: Option<f64>,
    /// Bit `k` set when `x{k+1}` occurs (coordinates beyond 64 always count).
    var_mask: u64,
}

impl CompiledExpr {
    /// Binds `params` and checks every coordinate reference against `dim`.
    pub fn new(expr: &Expr, dim: usize, params: &Params) -> Result<Self, ExprError> {
        let max_var = expr.max_variable();
        if max_var > dim {
            return Err(ExprError::VariableOutOfRange {
                index: max_var - 1,
                dim,
            });
        }
        let mut ops = Vec::new();
        emit(expr, params, &mut ops)?;
        let var_mask = ops.iter().fold(0u64, |m, op| match op {
            Op::Var(i) if *i < 64 => m | (1 << i),
            Op::Var(_) => m | (1 << 63),
            _ => m,
        });
        let mut depth = 0usize;
        let mut height = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Var(_) | Op::Time => height += 1,
                Op::Neg | Op::Call(_) | Op::PowI(_) => {}
                _ => height -= 1,
            }
            depth = depth.max(height);
        }
        let constant = match ops.as_slice() {
            [Op::Const(c)] => Some(*c),
            _ => None,
        };
        Ok(Self {
            ops,
            source: expr.to_string(),
            dim,
            uses_coords: max_var > 0,
            uses_time: expr.uses_time(),
            var_mask,
            depth,
            constant,
        })
    }

    pub fn parse(src: &str, dim: usize, params: &Params) -> Result<Self, ExprError> {
        Self::new(&Expr::parse(src)?, dim, params)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// False when the expression is constant in space.
    pub fn uses_coords(&self) -> bool {
        self.uses_coords
    }

    pub fn uses_time(&self) -> bool {
        self.uses_time
    }

    /// Whether coordinate `k` (zero-based) occurs in the expression.
    #[inline]
    pub fn uses_var(&self, k: usize) -> bool {
        self.var_mask & (1 << k.min(63)) != 0
    }

    #[inline]
    fn run<S: Scalar>(&self, var: impl Fn(usize) -> S, time: S) -> S {
        if self.depth <= INLINE_STACK {
            let mut stack = [S::constant(0.0); INLINE_STACK];
            self.run_on(&mut stack, var, time)
        } else {
            let mut stack = vec![S::constant(0.0); self.depth];
            self.run_on(&mut stack, var, time)
        }
    }

    #[inline(always)]
    fn run_on<S: Scalar>(&self, stack: &mut [S], var: impl Fn(usize) -> S, time: S) -> S {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    stack[sp] = S::constant(c);
                    sp += 1;
                }
                Op::Var(i) => {
                    stack[sp] = var(i);
                    sp += 1;
                }
                Op::Time => {
                    stack[sp] = time;
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Call(f) => stack[sp - 1] = f.apply1(stack[sp - 1]),
                Op::PowI(n) => stack[sp - 1] = stack[sp - 1].powi(n),
                _ => {
                    let b = stack[sp - 1];
                    let a = stack[sp - 2];
                    sp -= 1;
                    stack[sp - 1] = match op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div => a / b,
                        Op::Pow => pow_scalar(a, b, None),
                        _ => unreachable!(),
                    };
                }
            }
        }
        stack[0]
    }

    /// `coords.len()` must be at least the bound dimension.
    #[inline]
    pub fn eval(&self, coords: &[f64], t: f64) -> f64 {
        if let Some(c) = self.constant {
            return c;
        }
        self.run(|i| coords[i], t)
    }

    /// Value and derivative along `(seed, time_seed)`.
    #[inline]
    pub fn eval_dual(&self, coords: &[f64], seed: &[f64], t: f64, time_seed: f64) -> (f64, f64) {
        if !self.uses_coords && !self.uses_time {
            return (self.eval(coords, t), 0.0);
        }
        let d = self.run(|i| Dual::new(coords[i], seed[i]), Dual::new(t, time_seed));
        (d.re, d.eps)
    }

    /// Value and partial derivative with respect to coordinate `k`.
    #[inline]
    pub fn eval_partial(&self, coords: &[f64], k: usize, t: f64) -> (f64, f64) {
        if !self.uses_var(k) {
            return (self.eval(coords, t), 0.0);
        }
        let d = self.run(
            |i| Dual::new(coords[i], if i == k { 1.0 } else { 0.0 }),
            Dual::new(t, 0.0),
        );
        (d.re, d.eps)
    }
}

fn emit(e: &Expr, params: &Params, ops: &mut Vec<Op>) -> Result<(), ExprError> {
    match e {
        Expr::Num(v) => ops.push(Op::Const(*v)),
        Expr::Var(i) => ops.push(Op::Var(*i)),
        Expr::Time => ops.push(Op::Time),
        Expr::Param(p) => ops.push(Op::Const(*params.get(p).ok_or_else(|| ExprError::Unbound(p.clone()))?)),
        Expr::Neg(a) => {
            emit(a, params, ops)?;
            ops.push(Op::Neg);
        }
        Expr::Binary(BinOp::Pow, a, b) => emit_pow(a, b, params, ops)?,
        Expr::Binary(op, a, b) => {
            emit(a, params, ops)?;
            emit(b, params, ops)?;
            ops.push(match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div,
                BinOp::Pow => unreachable!(),
            });
        }
        Expr::Call(Func::Pow, args) => emit_pow(&args[0], &args[1], params, ops)?,
        Expr::Call(f, args) => {
            emit(&args[0], params, ops)?;
            ops.push(Op::Call(*f));
        }
    }
    Ok(())
}

fn emit_pow(base: &Expr, exponent: &Expr, params: &Params, ops: &mut Vec<Op>) -> Result<(), ExprError> {
    emit(base, params, ops)?;
    match exponent.literal_int_exponent() {
        Some(n) => ops.push(Op::PowI(n)),
        None => {
            emit(exponent, params, ops)?;
            ops.push(Op::Pow);
        }
    }
    Ok(())
}
