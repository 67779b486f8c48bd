//! Propensity and observable expressions over species and parameter symbols.
//!
//! An [`Expression`] is parsed and bound against declared species/parameter
//! names, then evaluated (or differentiated, via forward-mode dual numbers)
//! against an [`EvalContext`]. Expressions are immutable after parsing and
//! safe to share across threads; per-caller scratch lives in [`EvalStack`].

mod parser;
mod program;

pub use program::Dual;

use program::Op;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A bound reference to a declared symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolRef {
    Species(usize),
    Param(usize),
}

/// Parse- and bind-time failures.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

/// Runtime numeric-domain failures, carrying the source byte offset of the
/// offending `/` or `log`.
#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero (operator at byte {offset})")]
    DivisionByZero { offset: usize },
    #[error("log of non-positive value (call at byte {offset})")]
    LogDomain { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Func1 {
    Exp,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Func2 {
    Min,
    Max,
}

#[derive(Debug, Clone)]
pub(crate) enum Ast {
    Const(f64),
    Sym(SymbolRef),
    Neg(Box<Ast>),
    Bin {
        op: BinOp,
        lhs: Box<Ast>,
        rhs: Box<Ast>,
        /// Byte offset of the operator; used in errors for `/`.
        pos: usize,
    },
    Pow(Box<Ast>, i32),
    Call1 {
        f: Func1,
        arg: Box<Ast>,
        /// Byte offset of the call; used in errors for `log`.
        pos: usize,
    },
    Call2 {
        f: Func2,
        a: Box<Ast>,
        b: Box<Ast>,
    },
}

impl Ast {
    /// Structural equality, ignoring source positions.
    fn structurally_eq(&self, other: &Ast) -> bool {
        match (self, other) {
            (Ast::Const(a), Ast::Const(b)) => a == b,
            (Ast::Sym(a), Ast::Sym(b)) => a == b,
            (Ast::Neg(a), Ast::Neg(b)) => a.structurally_eq(b),
            (
                Ast::Bin { op, lhs, rhs, .. },
                Ast::Bin {
                    op: op2,
                    lhs: l2,
                    rhs: r2,
                    ..
                },
            ) => op == op2 && lhs.structurally_eq(l2) && rhs.structurally_eq(r2),
            (Ast::Pow(a, n), Ast::Pow(b, m)) => n == m && a.structurally_eq(b),
            (Ast::Call1 { f, arg, .. }, Ast::Call1 { f: g, arg: arg2, .. }) => {
                f == g && arg.structurally_eq(arg2)
            }
            (Ast::Call2 { f, a, b }, Ast::Call2 { f: g, a: a2, b: b2 }) => {
                f == g && a.structurally_eq(a2) && b.structurally_eq(b2)
            }
            _ => false,
        }
    }

    fn visit_symbols(&self, f: &mut impl FnMut(SymbolRef)) {
        match self {
            Ast::Const(_) => {}
            Ast::Sym(s) => f(*s),
            Ast::Neg(a) | Ast::Pow(a, _) | Ast::Call1 { arg: a, .. } => a.visit_symbols(f),
            Ast::Bin { lhs, rhs, .. } => {
                lhs.visit_symbols(f);
                rhs.visit_symbols(f);
            }
            Ast::Call2 { a, b, .. } => {
                a.visit_symbols(f);
                b.visit_symbols(f);
            }
        }
    }
}

/// State/parameter bindings for one evaluation. Species of reduced models
/// hold concentrations in `state`; discrete species hold copy numbers as
/// reals.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub state: &'a [f64],
    pub params: &'a [f64],
}

/// Reusable evaluation scratch. One per caller; never shared.
#[derive(Debug, Default)]
pub struct EvalStack {
    real: Vec<f64>,
    dual: Vec<Dual>,
}

impl EvalStack {
    pub fn new() -> Self {
        Self::default()
    }
}

/// An immutable, bound formula over declared species and parameters.
#[derive(Debug, Clone)]
pub struct Expression {
    source: String,
    ast: Ast,
    ops: Vec<Op>,
    species_used: Vec<usize>,
    params_used: Vec<usize>,
}

impl Expression {
    /// Parse `text` and bind every identifier against the declared names.
    /// Species and parameter namespaces must be disjoint (the model loader
    /// enforces this). Identifiers are case-sensitive.
    pub fn parse(text: &str, species: &[&str], params: &[&str]) -> Result<Self, ExprError> {
        let ast = parser::Parser::parse(text, species, params)?;
        let mut ops = Vec::new();
        program::compile(&ast, &mut ops);
        let mut species_used = Vec::new();
        let mut params_used = Vec::new();
        ast.visit_symbols(&mut |s| match s {
            SymbolRef::Species(i) => species_used.push(i),
            SymbolRef::Param(j) => params_used.push(j),
        });
        species_used.sort_unstable();
        species_used.dedup();
        params_used.sort_unstable();
        params_used.dedup();
        Ok(Expression {
            source: text.to_owned(),
            ast,
            ops,
            species_used,
            params_used,
        })
    }

    /// Evaluate to a real. Deterministic: equal contexts give bit-identical
    /// results.
    #[inline]
    pub fn eval(&self, ctx: EvalContext<'_>, stack: &mut EvalStack) -> Result<f64, EvalError> {
        program::eval_real(&self.ops, ctx.state, ctx.params, &mut stack.real)
    }

    /// Exact derivative w.r.t. one declared symbol via dual numbers.
    #[inline]
    pub fn derivative(
        &self,
        ctx: EvalContext<'_>,
        wrt: SymbolRef,
        stack: &mut EvalStack,
    ) -> Result<f64, EvalError> {
        Ok(program::eval_dual(&self.ops, ctx.state, ctx.params, wrt, &mut stack.dual)?.d)
    }

    /// Value and derivative in one pass.
    #[inline]
    pub fn eval_with_derivative(
        &self,
        ctx: EvalContext<'_>,
        wrt: SymbolRef,
        stack: &mut EvalStack,
    ) -> Result<Dual, EvalError> {
        program::eval_dual(&self.ops, ctx.state, ctx.params, wrt, &mut stack.dual)
    }

    /// Original source text.
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Sorted indices of species the formula reads.
    pub fn species_used(&self) -> &[usize] {
        &self.species_used
    }

    /// Sorted indices of parameters the formula reads.
    pub fn params_used(&self) -> &[usize] {
        &self.params_used
    }

    pub fn depends_on_species(&self, i: usize) -> bool {
        self.species_used.binary_search(&i).is_ok()
    }

    pub fn depends_on_param(&self, j: usize) -> bool {
        self.params_used.binary_search(&j).is_ok()
    }

    /// Structural equality ignoring source positions and original spelling.
    pub fn structurally_eq(&self, other: &Expression) -> bool {
        self.ast.structurally_eq(&other.ast)
    }

    /// Canonical text form; reparses to a structurally identical tree.
    pub fn canonical(&self, species: &[&str], params: &[&str]) -> String {
        let mut out = String::new();
        print_ast(&self.ast, 0, species, params, &mut out);
        out
    }
}

/// Serialize as the original source string; model files carry expressions
/// verbatim.
impl Serialize for Expression {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

/// Raw expression text, not yet bound to a network.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(transparent)]
pub struct ExprSource(pub String);

// Precedence levels for printing: 1 add/sub, 2 mul/div, 3 unary minus, 4 pow.
fn print_ast(ast: &Ast, parent_prec: u8, species: &[&str], params: &[&str], out: &mut String) {
    let prec = match ast {
        Ast::Bin { op: BinOp::Add, .. } | Ast::Bin { op: BinOp::Sub, .. } => 1,
        Ast::Bin { .. } => 2,
        Ast::Neg(_) => 3,
        Ast::Pow(..) => 4,
        _ => 5,
    };
    let need_paren = prec < parent_prec;
    if need_paren {
        out.push('(');
    }
    match ast {
        Ast::Const(v) => out.push_str(&format!("{v}")),
        Ast::Sym(SymbolRef::Species(i)) => out.push_str(species[*i]),
        Ast::Sym(SymbolRef::Param(j)) => out.push_str(params[*j]),
        Ast::Neg(a) => {
            out.push('-');
            print_ast(a, 3, species, params, out);
        }
        Ast::Bin { op, lhs, rhs, .. } => {
            // Right side always binds one level tighter so the printed form
            // reparses to the identical tree (left associativity).
            let (sym, rhs_prec) = match op {
                BinOp::Add => (" + ", 2),
                BinOp::Sub => (" - ", 2),
                BinOp::Mul => (" * ", 3),
                BinOp::Div => (" / ", 3),
            };
            print_ast(lhs, prec, species, params, out);
            out.push_str(sym);
            print_ast(rhs, rhs_prec, species, params, out);
        }
        Ast::Pow(base, n) => {
            print_ast(base, 5, species, params, out);
            out.push('^');
            out.push_str(&n.to_string());
        }
        Ast::Call1 { f, arg, .. } => {
            out.push_str(match f {
                Func1::Exp => "exp(",
                Func1::Log => "log(",
            });
            print_ast(arg, 0, species, params, out);
            out.push(')');
        }
        Ast::Call2 { f, a, b } => {
            out.push_str(match f {
                Func2::Min => "min(",
                Func2::Max => "max(",
            });
            print_ast(a, 0, species, params, out);
            out.push_str(", ");
            print_ast(b, 0, species, params, out);
            out.push(')');
        }
    }
    if need_paren {
        out.push(')');
    }
}
