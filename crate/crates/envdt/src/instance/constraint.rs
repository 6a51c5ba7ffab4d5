//! Constraint representation and classification.
//!
//! Constraints are written as boolean expressions over a class context
//! (`constraint C1 on Device: self.battery.level >= 0 and ...`). After
//! parsing, each expression is classified into one of five shapes so the
//! instantiator can *use* it — a `Range` yields generation bounds, a
//! `Cardinality` bounds link counts — instead of merely checking it.
//! Anything that matches no special shape stays a general `BoolExpr` and is
//! only ever checked.

use serde::{Deserialize, Serialize};

use crate::model::{BinOp, Expr, Value};

/// A named invariant over all instances of `context`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: String,
    pub context: String,
    pub kind: ConstraintKind,
}

/// A link-count bound: a literal, or a parameter such as `N` supplied at
/// instantiation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CountBound {
    Lit(u32),
    Param(String),
}

impl std::fmt::Display for CountBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CountBound::Lit(n) => write!(f, "{n}"),
            CountBound::Param(p) => f.write_str(p),
        }
    }
}

/// The five recognised constraint shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// `self.path >= lo and self.path <= hi`.
    Range { path: Vec<String>, lo: Value, hi: Value },
    /// `self.role->forAll(a, b | a.property <> b.property)`.
    Unique { role: String, property: String },
    /// `self.role->size() > 0 and self.role->size() <= upper` (and the
    /// general two-sided size comparison).
    Cardinality { role: String, lower: CountBound, upper: CountBound },
    /// `self.path > 0`.
    Positive { path: Vec<String> },
    /// Any other boolean expression; checked, never used for generation.
    BoolExpr(Expr),
}

impl ConstraintKind {
    pub fn shape_name(&self) -> &'static str {
        match self {
            ConstraintKind::Range { .. } => "range",
            ConstraintKind::Unique { .. } => "unique",
            ConstraintKind::Cardinality { .. } => "cardinality",
            ConstraintKind::Positive { .. } => "positive",
            ConstraintKind::BoolExpr(_) => "bool-expr",
        }
    }
}

/// Classifies a parsed constraint expression into its shape.
///
/// Classification is purely syntactic and deterministic, so printing a
/// classified constraint back to its canonical text and re-classifying it
/// is the identity.
pub fn classify(expr: Expr) -> ConstraintKind {
    if let Some(kind) = try_positive(&expr)
        .or_else(|| try_range(&expr))
        .or_else(|| try_unique(&expr))
        .or_else(|| try_cardinality(&expr))
    {
        kind
    } else {
        ConstraintKind::BoolExpr(expr)
    }
}

fn try_positive(expr: &Expr) -> Option<ConstraintKind> {
    if let Expr::Binary(BinOp::Gt, lhs, rhs) = expr {
        if let (Expr::Path(path), Expr::Lit(Value::Int(0))) = (lhs.as_ref(), rhs.as_ref()) {
            return Some(ConstraintKind::Positive { path: path.clone() });
        }
    }
    None
}

fn try_range(expr: &Expr) -> Option<ConstraintKind> {
    let Expr::Binary(BinOp::And, lhs, rhs) = expr else { return None };
    let (lo_path, lo) = ge_bound(lhs)?;
    let (hi_path, hi) = le_bound(rhs)?;
    if lo_path == hi_path {
        Some(ConstraintKind::Range { path: lo_path.clone(), lo: lo.clone(), hi: hi.clone() })
    } else {
        None
    }
}

/// Matches `self.path >= lit`.
fn ge_bound(expr: &Expr) -> Option<(&Vec<String>, &Value)> {
    if let Expr::Binary(BinOp::Ge, lhs, rhs) = expr {
        if let (Expr::Path(path), Expr::Lit(v)) = (lhs.as_ref(), rhs.as_ref()) {
            return Some((path, v));
        }
    }
    None
}

/// Matches `self.path <= lit`.
fn le_bound(expr: &Expr) -> Option<(&Vec<String>, &Value)> {
    if let Expr::Binary(BinOp::Le, lhs, rhs) = expr {
        if let (Expr::Path(path), Expr::Lit(v)) = (lhs.as_ref(), rhs.as_ref()) {
            return Some((path, v));
        }
    }
    None
}

fn try_unique(expr: &Expr) -> Option<ConstraintKind> {
    let Expr::ForAllPairs { role, v1, v2, body } = expr else { return None };
    let Expr::Binary(BinOp::Ne, lhs, rhs) = body.as_ref() else { return None };
    match (lhs.as_ref(), rhs.as_ref()) {
        (Expr::Var(a, pa), Expr::Var(b, pb))
            if a == v1 && b == v2 && pa == pb && pa.len() == 1 =>
        {
            Some(ConstraintKind::Unique { role: role.clone(), property: pa[0].clone() })
        }
        _ => None,
    }
}

fn try_cardinality(expr: &Expr) -> Option<ConstraintKind> {
    let Expr::Binary(BinOp::And, lhs, rhs) = expr else { return None };
    let (lo_role, lower) = size_lower(lhs)?;
    let (hi_role, upper) = size_upper(rhs)?;
    if lo_role == hi_role {
        Some(ConstraintKind::Cardinality { role: lo_role.to_string(), lower, upper })
    } else {
        None
    }
}

fn count_bound(expr: &Expr) -> Option<CountBound> {
    match expr {
        Expr::Lit(Value::Int(n)) if *n >= 0 => Some(CountBound::Lit(*n as u32)),
        Expr::Param(name) => Some(CountBound::Param(name.clone())),
        _ => None,
    }
}

/// Matches `self.role->size() > n` or `>= n` as a lower bound.
fn size_lower(expr: &Expr) -> Option<(&str, CountBound)> {
    let Expr::Binary(op, lhs, rhs) = expr else { return None };
    let Expr::Size(role) = lhs.as_ref() else { return None };
    let bound = count_bound(rhs)?;
    match (op, bound) {
        (BinOp::Ge, b) => Some((role, b)),
        (BinOp::Gt, CountBound::Lit(n)) => Some((role, CountBound::Lit(n + 1))),
        _ => None,
    }
}

/// Matches `self.role->size() <= n` or `< n` as an upper bound.
fn size_upper(expr: &Expr) -> Option<(&str, CountBound)> {
    let Expr::Binary(op, lhs, rhs) = expr else { return None };
    let Expr::Size(role) = lhs.as_ref() else { return None };
    let bound = count_bound(rhs)?;
    match (op, bound) {
        (BinOp::Le, b) => Some((role, b)),
        (BinOp::Lt, CountBound::Lit(n)) if n > 0 => Some((role, CountBound::Lit(n - 1))),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(segs: &[&str]) -> Expr {
        Expr::Path(segs.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn classifies_the_four_special_shapes() {
        // self.battery.level >= 0 and self.battery.level <= 100
        let range = Expr::bin(
            BinOp::And,
            Expr::bin(BinOp::Ge, path(&["battery", "level"]), Expr::lit_int(0)),
            Expr::bin(BinOp::Le, path(&["battery", "level"]), Expr::lit_int(100)),
        );
        assert!(matches!(
            classify(range),
            ConstraintKind::Range { lo: Value::Int(0), hi: Value::Int(100), .. }
        ));

        // self.uid > 0
        let positive = Expr::bin(BinOp::Gt, path(&["uid"]), Expr::lit_int(0));
        assert!(matches!(classify(positive), ConstraintKind::Positive { .. }));

        // self.devices->forAll(d1, d2 | d1.number <> d2.number)
        let unique = Expr::ForAllPairs {
            role: "devices".into(),
            v1: "d1".into(),
            v2: "d2".into(),
            body: Box::new(Expr::bin(
                BinOp::Ne,
                Expr::Var("d1".into(), vec!["number".into()]),
                Expr::Var("d2".into(), vec!["number".into()]),
            )),
        };
        assert!(matches!(
            classify(unique),
            ConstraintKind::Unique { ref role, ref property } if role == "devices" && property == "number"
        ));

        // self.devices->size() > 0 and self.devices->size() <= N
        let card = Expr::bin(
            BinOp::And,
            Expr::bin(BinOp::Gt, Expr::Size("devices".into()), Expr::lit_int(0)),
            Expr::bin(BinOp::Le, Expr::Size("devices".into()), Expr::Param("N".into())),
        );
        match classify(card) {
            ConstraintKind::Cardinality { role, lower, upper } => {
                assert_eq!(role, "devices");
                assert_eq!(lower, CountBound::Lit(1));
                assert_eq!(upper, CountBound::Param("N".into()));
            }
            other => panic!("expected cardinality, got {other:?}"),
        }
    }

    #[test]
    fn everything_else_stays_bool_expr() {
        // self.level > 5  (not the `> 0` positive idiom)
        let e = Expr::bin(BinOp::Gt, path(&["level"]), Expr::lit_int(5));
        assert!(matches!(classify(e), ConstraintKind::BoolExpr(_)));
    }
}
