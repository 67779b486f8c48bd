//! Stack-machine form of a bound expression.
//!
//! The AST is flattened post-order into a linear op sequence once at bind
//! time; the interpreters below are what simulators call in their inner
//! loops. There are two of them, one over `f64` and one over dual numbers
//! for exact forward-mode derivatives.

use super::{Ast, BinOp, EvalError, Func1, Func2, SymbolRef};

#[derive(Debug, Clone, PartialEq)]
pub(super) enum Op {
    Const(f64),
    Species(u32),
    Param(u32),
    Add,
    Sub,
    Mul,
    Div { pos: u32 },
    Neg,
    PowI(i32),
    Exp,
    Log { pos: u32 },
    Min,
    Max,
}

/// First-order dual number: value and one derivative component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

pub(super) fn compile(ast: &Ast, out: &mut Vec<Op>) {
    match ast {
        Ast::Const(v) => out.push(Op::Const(*v)),
        Ast::Sym(SymbolRef::Species(i)) => out.push(Op::Species(*i as u32)),
        Ast::Sym(SymbolRef::Param(j)) => out.push(Op::Param(*j as u32)),
        Ast::Neg(a) => {
            compile(a, out);
            out.push(Op::Neg);
        }
        Ast::Bin { op, lhs, rhs, pos } => {
            compile(lhs, out);
            compile(rhs, out);
            out.push(match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div { pos: *pos as u32 },
            });
        }
        Ast::Pow(a, n) => {
            compile(a, out);
            out.push(Op::PowI(*n));
        }
        Ast::Call1 { f, arg, pos } => {
            compile(arg, out);
            out.push(match f {
                Func1::Exp => Op::Exp,
                Func1::Log => Op::Log { pos: *pos as u32 },
            });
        }
        Ast::Call2 { f, a, b } => {
            compile(a, out);
            compile(b, out);
            out.push(match f {
                Func2::Min => Op::Min,
                Func2::Max => Op::Max,
            });
        }
    }
}

#[inline]
pub(super) fn eval_real(
    ops: &[Op],
    state: &[f64],
    params: &[f64],
    stack: &mut Vec<f64>,
) -> Result<f64, EvalError> {
    stack.clear();
    for op in ops {
        match op {
            Op::Const(v) => stack.push(*v),
            Op::Species(i) => stack.push(state[*i as usize]),
            Op::Param(j) => stack.push(params[*j as usize]),
            Op::Neg => {
                let a = stack.last_mut().expect("well-formed program");
                *a = -*a;
            }
            Op::PowI(n) => {
                let a = stack.last_mut().expect("well-formed program");
                *a = a.powi(*n);
            }
            Op::Exp => {
                let a = stack.last_mut().expect("well-formed program");
                *a = a.exp();
            }
            Op::Log { pos } => {
                let a = stack.last_mut().expect("well-formed program");
                if *a <= 0.0 {
                    return Err(EvalError::LogDomain {
                        offset: *pos as usize,
                    });
                }
                *a = a.ln();
            }
            Op::Add => {
                let b = stack.pop().expect("well-formed program");
                let a = stack.last_mut().expect("well-formed program");
                *a += b;
            }
            Op::Sub => {
                let b = stack.pop().expect("well-formed program");
                let a = stack.last_mut().expect("well-formed program");
                *a -= b;
            }
            Op::Mul => {
                let b = stack.pop().expect("well-formed program");
                let a = stack.last_mut().expect("well-formed program");
                *a *= b;
            }
            Op::Div { pos } => {
                let b = stack.pop().expect("well-formed program");
                if b == 0.0 {
                    return Err(EvalError::DivisionByZero {
                        offset: *pos as usize,
                    });
                }
                let a = stack.last_mut().expect("well-formed program");
                *a /= b;
            }
            Op::Min => {
                let b = stack.pop().expect("well-formed program");
                let a = stack.last_mut().expect("well-formed program");
                // ties keep the first argument
                if b < *a {
                    *a = b;
                }
            }
            Op::Max => {
                let b = stack.pop().expect("well-formed program");
                let a = stack.last_mut().expect("well-formed program");
                if b > *a {
                    *a = b;
                }
            }
        }
    }
    Ok(stack.pop().expect("well-formed program"))
}

/// Forward-mode evaluation seeded with `d = 1` on `wrt`.
///
/// `min`/`max` follow the argument that wins on value; ties follow the
/// first argument.
pub(super) fn eval_dual(
    ops: &[Op],
    state: &[f64],
    params: &[f64],
    wrt: SymbolRef,
    stack: &mut Vec<Dual>,
) -> Result<Dual, EvalError> {
    stack.clear();
    for op in ops {
        match op {
            Op::Const(v) => stack.push(Dual { v: *v, d: 0.0 }),
            Op::Species(i) => {
                let seed = matches!(wrt, SymbolRef::Species(k) if k == *i as usize);
                stack.push(Dual {
                    v: state[*i as usize],
                    d: if seed { 1.0 } else { 0.0 },
                });
            }
            Op::Param(j) => {
                let seed = matches!(wrt, SymbolRef::Param(k) if k == *j as usize);
                stack.push(Dual {
                    v: params[*j as usize],
                    d: if seed { 1.0 } else { 0.0 },
                });
            }
            Op::Neg => {
                let a = stack.last_mut().expect("well-formed program");
                a.v = -a.v;
                a.d = -a.d;
            }
            Op::PowI(n) => {
                let a = stack.last_mut().expect("well-formed program");
                let n = *n;
                let dv = if n == 0 {
                    0.0
                } else {
                    f64::from(n) * a.v.powi(n - 1) * a.d
                };
                a.v = a.v.powi(n);
                a.d = dv;
            }
            Op::Exp => {
                let a = stack.last_mut().expect("well-formed program");
                a.v = a.v.exp();
                a.d *= a.v;
            }
            Op::Log { pos } => {
                let a = stack.last_mut().expect("well-formed program");
                if a.v <= 0.0 {
                    return Err(EvalError::LogDomain {
                        offset: *pos as usize,
                    });
                }
                a.d /= a.v;
                a.v = a.v.ln();
            }
            Op::Add => {
                let b = stack.pop().expect("well-formed program");
                let a = stack.last_mut().expect("well-formed program");
                a.v += b.v;
                a.d += b.d;
            }
            Op::Sub => {
                let b = stack.pop().expect("well-formed program");
                let a = stack.last_mut().expect("well-formed program");
                a.v -= b.v;
                a.d -= b.d;
            }
            Op::Mul => {
                let b = stack.pop().expect("well-formed program");
                let a = stack.last_mut().expect("well-formed program");
                a.d = a.d * b.v + a.v * b.d;
                a.v *= b.v;
            }
            Op::Div { pos } => {
                let b = stack.pop().expect("well-formed program");
                if b.v == 0.0 {
                    return Err(EvalError::DivisionByZero {
                        offset: *pos as usize,
                    });
                }
                let a = stack.last_mut().expect("well-formed program");
                a.d = (a.d * b.v - a.v * b.d) / (b.v * b.v);
                a.v /= b.v;
            }
            Op::Min => {
                let b = stack.pop().expect("well-formed program");
                let a = stack.last_mut().expect("well-formed program");
                // value ties follow the first argument's derivative
                if b.v < a.v {
                    *a = b;
                }
            }
            Op::Max => {
                let b = stack.pop().expect("well-formed program");
                let a = stack.last_mut().expect("well-formed program");
                if b.v > a.v {
                    *a = b;
                }
            }
        }
    }
    Ok(stack.pop().expect("well-formed program"))
}
