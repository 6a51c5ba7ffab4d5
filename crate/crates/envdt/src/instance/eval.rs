//! Expression evaluation against a concrete configuration.

use std::collections::BTreeMap;

use super::InstanceModel;
use crate::model::{BinOp, Expr, UnOp, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unknown instance '{0}'")]
    UnknownInstance(String),
    #[error("instance '{instance}' has no property '{property}'")]
    UnknownProperty { instance: String, property: String },
    #[error("instance '{instance}' has no links for role '{role}'")]
    UnknownRole { instance: String, role: String },
    #[error("parameter '{0}' is not set")]
    UnknownParam(String),
    #[error("variable '{0}' is not bound")]
    UnboundVar(String),
    #[error("empty property path")]
    EmptyPath,
    #[error("operator {op} cannot combine {lhs} and {rhs}")]
    TypeMismatch { op: &'static str, lhs: String, rhs: String },
    #[error("operator {op} needs a {expected}, got {got}")]
    BadOperand { op: &'static str, expected: &'static str, got: String },
}

/// Evaluation context: the configuration, the instance `self` refers to,
/// and any pair-quantifier bindings in scope.
pub struct EvalCtx<'a> {
    pub im: &'a InstanceModel,
    pub self_id: &'a str,
    bound: BTreeMap<String, String>,
}

impl<'a> EvalCtx<'a> {
    pub fn new(im: &'a InstanceModel, self_id: &'a str) -> Self {
        Self { im, self_id, bound: BTreeMap::new() }
    }

    fn with_pair(&self, v1: &str, id1: &str, v2: &str, id2: &str) -> EvalCtx<'a> {
        let mut bound = self.bound.clone();
        bound.insert(v1.to_string(), id1.to_string());
        bound.insert(v2.to_string(), id2.to_string());
        EvalCtx { im: self.im, self_id: self.self_id, bound }
    }
}

/// Evaluates `expr` in `ctx`. Constraints hold when the result is
/// `Bool(true)`.
pub fn eval_expr(expr: &Expr, ctx: &EvalCtx<'_>) -> Result<Value, EvalError> {
    match expr {
        Expr::Lit(v) => Ok(v.clone()),
        Expr::Path(path) => ctx.im.read_path(ctx.self_id, path),
        Expr::Param(name) => ctx
            .im
            .params
            .get(name)
            .map(|v| Value::Int(*v))
            .ok_or_else(|| EvalError::UnknownParam(name.clone())),
        Expr::Size(role) => {
            let inst = ctx
                .im
                .instance(ctx.self_id)
                .ok_or_else(|| EvalError::UnknownInstance(ctx.self_id.to_string()))?;
            Ok(Value::Int(inst.links.get(role.as_str()).map_or(0, |t| t.len()) as i64))
        }
        Expr::ForAllPairs { role, v1, v2, body } => {
            let inst = ctx
                .im
                .instance(ctx.self_id)
                .ok_or_else(|| EvalError::UnknownInstance(ctx.self_id.to_string()))?;
            let linked = inst.links.get(role.as_str()).cloned().unwrap_or_default();
            for i in 0..linked.len() {
                for j in (i + 1)..linked.len() {
                    let pair_ctx = ctx.with_pair(v1, &linked[i], v2, &linked[j]);
                    match eval_expr(body, &pair_ctx)? {
                        Value::Bool(true) => {}
                        Value::Bool(false) => return Ok(Value::Bool(false)),
                        other => {
                            return Err(EvalError::BadOperand {
                                op: "forAllPairs",
                                expected: "boolean body",
                                got: other.type_name().to_string(),
                            })
                        }
                    }
                }
            }
            Ok(Value::Bool(true))
        }
        Expr::Var(var, path) => {
            let id = ctx.bound.get(var).ok_or_else(|| EvalError::UnboundVar(var.clone()))?;
            ctx.im.read_path(id, path)
        }
        Expr::Unary(op, inner) => {
            let v = eval_expr(inner, ctx)?;
            match (op, v) {
                (UnOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                (UnOp::Neg, Value::Int(i)) => Ok(Value::Int(-i)),
                (UnOp::Neg, Value::Real(r)) => Ok(Value::Real(-r)),
                (UnOp::Not, other) => Err(EvalError::BadOperand {
                    op: "not",
                    expected: "boolean",
                    got: other.type_name().to_string(),
                }),
                (UnOp::Neg, other) => Err(EvalError::BadOperand {
                    op: "-",
                    expected: "number",
                    got: other.type_name().to_string(),
                }),
            }
        }
        Expr::Binary(op, lhs, rhs) => {
            let l = eval_expr(lhs, ctx)?;
            let r = eval_expr(rhs, ctx)?;
            eval_binary(*op, l, r)
        }
    }
}

fn eval_binary(op: BinOp, l: Value, r: Value) -> Result<Value, EvalError> {
    use BinOp::*;
    let mismatch = |l: &Value, r: &Value| EvalError::TypeMismatch {
        op: op.symbol(),
        lhs: l.type_name().to_string(),
        rhs: r.type_name().to_string(),
    };
    match op {
        Add | Sub | Mul | Div => match (&l, &r) {
            (Value::Int(a), Value::Int(b)) if op != Div => Ok(Value::Int(match op {
                Add => a + b,
                Sub => a - b,
                Mul => a * b,
                _ => unreachable!(),
            })),
            _ => {
                let (Some(a), Some(b)) = (l.as_f64(), r.as_f64()) else {
                    return Err(mismatch(&l, &r));
                };
                Ok(Value::Real(match op {
                    Add => a + b,
                    Sub => a - b,
                    Mul => a * b,
                    Div => a / b,
                    _ => unreachable!(),
                }))
            }
        },
        Lt | Le | Gt | Ge => {
            let (Some(a), Some(b)) = (l.as_f64(), r.as_f64()) else {
                return Err(mismatch(&l, &r));
            };
            Ok(Value::Bool(match op {
                Lt => a < b,
                Le => a <= b,
                Gt => a > b,
                Ge => a >= b,
                _ => unreachable!(),
            }))
        }
        Eq | Ne => {
            let equal = match (&l, &r) {
                // Numeric equality crosses the int/real divide.
                (Value::Int(_) | Value::Real(_), Value::Int(_) | Value::Real(_)) => {
                    l.as_f64() == r.as_f64()
                }
                (Value::Bool(a), Value::Bool(b)) => a == b,
                (Value::Str(a), Value::Str(b)) => a == b,
                (Value::EnumVariant(a), Value::EnumVariant(b)) => a == b,
                _ => return Err(mismatch(&l, &r)),
            };
            Ok(Value::Bool(if op == Eq { equal } else { !equal }))
        }
        And | Or => match (&l, &r) {
            (Value::Bool(a), Value::Bool(b)) => {
                Ok(Value::Bool(if op == And { *a && *b } else { *a || *b }))
            }
            _ => Err(mismatch(&l, &r)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::ComponentInstance;

    fn fixture() -> InstanceModel {
        InstanceModel {
            model_name: "M".into(),
            params: BTreeMap::from([("N".to_string(), 4i64)]),
            instances: vec![
                ComponentInstance {
                    id: "A#0".into(),
                    class: "A".into(),
                    properties: BTreeMap::from([
                        ("x".to_string(), Value::Int(7)),
                        ("ok".to_string(), Value::Bool(true)),
                    ]),
                    links: BTreeMap::from([(
                        "bs".to_string(),
                        vec!["B#0".to_string(), "B#1".to_string()],
                    )]),
                },
                ComponentInstance {
                    id: "B#0".into(),
                    class: "B".into(),
                    properties: BTreeMap::from([("y".to_string(), Value::Int(1))]),
                    links: BTreeMap::new(),
                },
                ComponentInstance {
                    id: "B#1".into(),
                    class: "B".into(),
                    properties: BTreeMap::from([("y".to_string(), Value::Int(2))]),
                    links: BTreeMap::new(),
                },
            ],
        }
    }

    fn eval(expr: Expr) -> Result<Value, EvalError> {
        let im = fixture();
        let ctx = EvalCtx::new(&im, "A#0");
        eval_expr(&expr, &ctx)
    }

    #[test]
    fn paths_params_and_sizes_resolve() {
        assert_eq!(eval(Expr::Path(vec!["x".into()])).unwrap(), Value::Int(7));
        // Multi-segment paths follow the first link.
        assert_eq!(eval(Expr::Path(vec!["bs".into(), "y".into()])).unwrap(), Value::Int(1));
        assert_eq!(eval(Expr::Param("N".into())).unwrap(), Value::Int(4));
        assert_eq!(eval(Expr::Size("bs".into())).unwrap(), Value::Int(2));
        assert_eq!(eval(Expr::Size("missing".into())).unwrap(), Value::Int(0));
    }

    #[test]
    fn arithmetic_keeps_ints_until_division() {
        let e = Expr::bin(BinOp::Add, Expr::lit_int(2), Expr::Path(vec!["x".into()]));
        assert_eq!(eval(e).unwrap(), Value::Int(9));
        let d = Expr::bin(BinOp::Div, Expr::lit_int(7), Expr::lit_int(2));
        assert_eq!(eval(d).unwrap(), Value::Real(3.5));
    }

    #[test]
    fn comparisons_mix_int_and_real() {
        let e = Expr::bin(BinOp::Ge, Expr::Path(vec!["x".into()]), Expr::Lit(Value::Real(6.5)));
        assert_eq!(eval(e).unwrap(), Value::Bool(true));
        let e = Expr::bin(BinOp::Eq, Expr::lit_int(3), Expr::Lit(Value::Real(3.0)));
        assert_eq!(eval(e).unwrap(), Value::Bool(true));
    }

    #[test]
    fn pair_quantifier_checks_every_pair() {
        let distinct = Expr::ForAllPairs {
            role: "bs".into(),
            v1: "p".into(),
            v2: "q".into(),
            body: Box::new(Expr::bin(
                BinOp::Ne,
                Expr::Var("p".into(), vec!["y".into()]),
                Expr::Var("q".into(), vec!["y".into()]),
            )),
        };
        assert_eq!(eval(distinct.clone()).unwrap(), Value::Bool(true));

        let mut im = fixture();
        im.instances[2].properties.insert("y".into(), Value::Int(1));
        let ctx = EvalCtx::new(&im, "A#0");
        assert_eq!(eval_expr(&distinct, &ctx).unwrap(), Value::Bool(false));
    }

    #[test]
    fn type_errors_are_reported_not_panicked() {
        let e = Expr::bin(BinOp::And, Expr::lit_int(1), Expr::Lit(Value::Bool(true)));
        assert!(matches!(eval(e), Err(EvalError::TypeMismatch { .. })));
        let e = Expr::Var("nope".into(), vec!["y".into()]);
        assert!(matches!(eval(e), Err(EvalError::UnboundVar(_))));
    }
}
