//! Expression tree shared by constraints and the action mini-language.
//!
//! The grammar is deliberately small: literals, property paths, arithmetic,
//! comparisons, boolean connectives, plus two collection forms used by
//! constraints — `self.role->size()` and
//! `self.role->forAll(v1, v2 | v1.p <> v2.p)`. Evaluation lives next to the
//! data it reads: constraint checking in [`crate::instance`], action
//! execution in [`crate::engine`].

use serde::{Deserialize, Serialize};

/// A typed literal or property value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Real(f64),
    Bool(bool),
    Str(String),
    /// A variant of an `enum` property.
    EnumVariant(String),
}

impl Value {
    /// Numeric view used by arithmetic and comparisons; `None` for booleans
    /// and strings.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Real(_) => "real",
            Value::Bool(_) => "bool",
            Value::Str(_) => "string",
            Value::EnumVariant(_) => "enum",
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r:?}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::EnumVariant(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Eq => "=",
            BinOp::Ne => "<>",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnOp {
    Not,
    Neg,
}

/// An expression. Paths are stored without the leading `self.`; inside a
/// `forAll` body, [`Expr::Var`] refers to one of the two bound variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Lit(Value),
    /// `self.a.b` in constraints, `a.b` in actions: navigation from the
    /// context instance through single-valued roles to a property.
    Path(Vec<String>),
    /// A named model parameter supplied at instantiation time, e.g. `N`.
    Param(String),
    /// `self.role->size()`.
    Size(String),
    /// `self.role->forAll(v1, v2 | body)`: the body must hold for every
    /// ordered pair of distinct linked instances.
    ForAllPairs { role: String, v1: String, v2: String, body: Box<Expr> },
    /// `v.prop...` where `v` is a `forAll` bound variable.
    Var(String, Vec<String>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn lit_int(i: i64) -> Expr {
        Expr::Lit(Value::Int(i))
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }
}
