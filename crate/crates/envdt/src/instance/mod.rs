//! Concrete environment configurations: instances, links, and the
//! constraints that keep them well-formed.
//!
//! An [`InstanceModel`] is one concrete population of an environment
//! model: component instances with drawn property values, linked along
//! the class associations. The first instance of each class (`Class#0`)
//! is the behavioural one — machines owned by that class read and write
//! its properties; later instances exist to make multiplicity and
//! uniqueness constraints meaningful.

mod constraint;
mod eval;
mod instantiate;
mod serialize;

pub use constraint::{classify, Constraint, ConstraintKind, CountBound};
pub use eval::{eval_expr, EvalCtx, EvalError};
pub use instantiate::{instantiate, InstantiateError, DEFAULT_MAX_ATTEMPTS};
pub use serialize::InstanceFileError;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{EnvironmentModel, Value};

/// One live component with its drawn property values and outgoing links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentInstance {
    pub id: String,
    pub class: String,
    pub properties: BTreeMap<String, Value>,
    /// Role name to linked instance ids, in creation order.
    pub links: BTreeMap<String, Vec<String>>,
}

/// A fully populated environment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceModel {
    pub model_name: String,
    /// Named integer parameters referenced by constraints (for example a
    /// fleet-size cap), fixed at instantiation time.
    pub params: BTreeMap<String, i64>,
    pub instances: Vec<ComponentInstance>,
}

/// One resolved property assignment, produced by an action after path
/// navigation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyWrite {
    pub instance: String,
    pub property: String,
    pub value: Value,
}

/// One constraint violation found while checking a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub instance: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} at {}: {}", self.constraint, self.instance, self.message)
    }
}

impl InstanceModel {
    pub fn instance(&self, id: &str) -> Option<&ComponentInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    fn instance_mut(&mut self, id: &str) -> Option<&mut ComponentInstance> {
        self.instances.iter_mut().find(|i| i.id == id)
    }

    /// The behavioural instance of a class: the first one created.
    pub fn first_of_class(&self, class: &str) -> Option<&ComponentInstance> {
        self.instances.iter().find(|i| i.class == class)
    }

    /// Follows `path` from `start` through links (first link per role) to
    /// the owning instance and property name of the final segment.
    pub fn resolve_property_path(
        &self,
        start: &str,
        path: &[String],
    ) -> Result<(String, String), EvalError> {
        let mut cur = self
            .instance(start)
            .ok_or_else(|| EvalError::UnknownInstance(start.to_string()))?;
        for (i, seg) in path.iter().enumerate() {
            if i + 1 == path.len() {
                if !cur.properties.contains_key(seg) {
                    return Err(EvalError::UnknownProperty {
                        instance: cur.id.clone(),
                        property: seg.clone(),
                    });
                }
                return Ok((cur.id.clone(), seg.clone()));
            }
            let targets = cur
                .links
                .get(seg)
                .filter(|t| !t.is_empty())
                .ok_or_else(|| EvalError::UnknownRole { instance: cur.id.clone(), role: seg.clone() })?;
            cur = self
                .instance(&targets[0])
                .ok_or_else(|| EvalError::UnknownInstance(targets[0].clone()))?;
        }
        Err(EvalError::EmptyPath)
    }

    /// Reads the value a property path points at.
    pub fn read_path(&self, start: &str, path: &[String]) -> Result<Value, EvalError> {
        let (id, prop) = self.resolve_property_path(start, path)?;
        Ok(self.instance(&id).expect("resolved id exists").properties[&prop].clone())
    }

    /// Applies a batch of property writes atomically: either every write
    /// lands and every constraint still holds, or the configuration is
    /// left untouched and the violations are returned.
    pub fn apply_update(
        &mut self,
        writes: &[PropertyWrite],
        model: &EnvironmentModel,
    ) -> Result<(), Vec<Violation>> {
        let mut candidate = self.clone();
        for w in writes {
            let Some(inst) = candidate.instance_mut(&w.instance) else {
                return Err(vec![Violation {
                    constraint: "update".into(),
                    instance: w.instance.clone(),
                    message: "write targets an unknown instance".into(),
                }]);
            };
            match inst.properties.get_mut(&w.property) {
                Some(slot) => *slot = w.value.clone(),
                None => {
                    return Err(vec![Violation {
                        constraint: "update".into(),
                        instance: w.instance.clone(),
                        message: format!("write targets unknown property '{}'", w.property),
                    }])
                }
            }
        }
        let violations = candidate.check_constraints(model);
        if violations.is_empty() {
            *self = candidate;
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Evaluates every constraint against every instance of its context
    /// class, returning all violations.
    pub fn check_constraints(&self, model: &EnvironmentModel) -> Vec<Violation> {
        let mut out = Vec::new();
        for constraint in &model.constraints {
            for inst in self.instances.iter().filter(|i| i.class == constraint.context) {
                if let Some(message) = self.check_one(constraint, inst) {
                    out.push(Violation {
                        constraint: constraint.id.clone(),
                        instance: inst.id.clone(),
                        message,
                    });
                }
            }
        }
        out
    }

    /// Checks one constraint against one instance; `Some(message)` on
    /// violation.
    fn check_one(&self, constraint: &Constraint, inst: &ComponentInstance) -> Option<String> {
        match &constraint.kind {
            ConstraintKind::Range { path, lo, hi } => {
                let v = match self.read_path(&inst.id, path) {
                    Ok(v) => v,
                    Err(e) => return Some(e.to_string()),
                };
                let (Some(x), Some(l), Some(h)) = (v.as_f64(), lo.as_f64(), hi.as_f64()) else {
                    return Some(format!("range needs numeric values, got {v}"));
                };
                (x < l || x > h).then(|| format!("{} = {x} outside [{l}, {h}]", path.join(".")))
            }
            ConstraintKind::Unique { role, property } => {
                let linked = inst.links.get(role.as_str()).cloned().unwrap_or_default();
                let mut seen: Vec<Value> = Vec::new();
                for id in &linked {
                    let Some(target) = self.instance(id) else {
                        return Some(format!("link to unknown instance '{id}'"));
                    };
                    let Some(v) = target.properties.get(property) else {
                        return Some(format!("'{id}' lacks property '{property}'"));
                    };
                    if seen.contains(v) {
                        return Some(format!("duplicate {role}.{property} value {v}"));
                    }
                    seen.push(v.clone());
                }
                None
            }
            ConstraintKind::Cardinality { role, lower, upper } => {
                let n = inst.links.get(role.as_str()).map_or(0, |t| t.len()) as i64;
                let resolve = |b: &CountBound| -> Result<i64, String> {
                    match b {
                        CountBound::Lit(v) => Ok(*v as i64),
                        CountBound::Param(name) => self
                            .params
                            .get(name)
                            .copied()
                            .ok_or_else(|| format!("parameter '{name}' is not set")),
                    }
                };
                let l = match resolve(lower) {
                    Ok(v) => v,
                    Err(e) => return Some(e),
                };
                let u = match resolve(upper) {
                    Ok(v) => v,
                    Err(e) => return Some(e),
                };
                (n < l || n > u).then(|| format!("|{role}| = {n} outside [{l}, {u}]"))
            }
            ConstraintKind::Positive { path } => {
                let v = match self.read_path(&inst.id, path) {
                    Ok(v) => v,
                    Err(e) => return Some(e.to_string()),
                };
                let Some(x) = v.as_f64() else {
                    return Some(format!("positive needs a numeric value, got {v}"));
                };
                (x <= 0.0).then(|| format!("{} = {x} is not positive", path.join(".")))
            }
            ConstraintKind::BoolExpr(expr) => {
                let ctx = EvalCtx::new(self, &inst.id);
                match eval_expr(expr, &ctx) {
                    Ok(Value::Bool(true)) => None,
                    Ok(Value::Bool(false)) => Some("expression is false".to_string()),
                    Ok(other) => Some(format!("expression is not boolean: {other}")),
                    Err(e) => Some(e.to_string()),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Expr;

    fn mini_model() -> EnvironmentModel {
        use crate::model::*;
        EnvironmentModel {
            name: "Mini".into(),
            classes: vec![
                ComponentClass {
                    name: "Hub".into(),
                    stereotypes: vec![Stereotype::Feature],
                    properties: vec![],
                    receptions: vec![],
                    assocs: vec![AssocDecl {
                        role: "cells".into(),
                        target: "Cell".into(),
                        lower: 1,
                        upper: 3,
                    }],
                    owned_behavior: None,
                    dt_side: false,
                },
                ComponentClass {
                    name: "Cell".into(),
                    stereotypes: vec![Stereotype::Power],
                    properties: vec![PropertyDecl {
                        name: "level".into(),
                        ty: PropertyType::Int,
                        range: Some((Value::Int(0), Value::Int(100))),
                        unit: None,
                    }],
                    receptions: vec![],
                    assocs: vec![],
                    owned_behavior: None,
                    dt_side: false,
                },
            ],
            constraints: vec![
                Constraint {
                    id: "LevelInRange".into(),
                    context: "Cell".into(),
                    kind: ConstraintKind::Range {
                        path: vec!["level".into()],
                        lo: Value::Int(0),
                        hi: Value::Int(100),
                    },
                },
                Constraint {
                    id: "DistinctLevels".into(),
                    context: "Hub".into(),
                    kind: ConstraintKind::Unique { role: "cells".into(), property: "level".into() },
                },
                Constraint {
                    id: "CellCount".into(),
                    context: "Hub".into(),
                    kind: ConstraintKind::Cardinality {
                        role: "cells".into(),
                        lower: CountBound::Lit(1),
                        upper: CountBound::Param("N".into()),
                    },
                },
            ],
            machines: vec![],
        }
    }

    fn mini_instances() -> InstanceModel {
        let cell = |k: usize, level: i64| ComponentInstance {
            id: format!("Cell#{k}"),
            class: "Cell".into(),
            properties: BTreeMap::from([("level".to_string(), Value::Int(level))]),
            links: BTreeMap::new(),
        };
        InstanceModel {
            model_name: "Mini".into(),
            params: BTreeMap::from([("N".to_string(), 3i64)]),
            instances: vec![
                ComponentInstance {
                    id: "Hub#0".into(),
                    class: "Hub".into(),
                    properties: BTreeMap::new(),
                    links: BTreeMap::from([(
                        "cells".to_string(),
                        vec!["Cell#0".to_string(), "Cell#1".to_string()],
                    )]),
                },
                cell(0, 40),
                cell(1, 70),
            ],
        }
    }

    #[test]
    fn valid_configuration_has_no_violations() {
        assert!(mini_instances().check_constraints(&mini_model()).is_empty());
    }

    #[test]
    fn each_constraint_shape_detects_its_violation() {
        let model = mini_model();

        let mut im = mini_instances();
        im.instance_mut("Cell#0").unwrap().properties.insert("level".into(), Value::Int(120));
        let v = im.check_constraints(&model);
        assert!(v.iter().any(|v| v.constraint == "LevelInRange"), "{v:?}");

        let mut im = mini_instances();
        im.instance_mut("Cell#1").unwrap().properties.insert("level".into(), Value::Int(40));
        let v = im.check_constraints(&model);
        assert!(v.iter().any(|v| v.constraint == "DistinctLevels"), "{v:?}");

        let mut im = mini_instances();
        im.params.insert("N".into(), 1);
        let v = im.check_constraints(&model);
        assert!(v.iter().any(|v| v.constraint == "CellCount"), "{v:?}");
    }

    #[test]
    fn apply_update_commits_valid_writes() {
        let model = mini_model();
        let mut im = mini_instances();
        im.apply_update(
            &[PropertyWrite {
                instance: "Cell#0".into(),
                property: "level".into(),
                value: Value::Int(55),
            }],
            &model,
        )
        .unwrap();
        assert_eq!(im.instance("Cell#0").unwrap().properties["level"], Value::Int(55));
    }

    #[test]
    fn apply_update_rolls_back_violating_writes() {
        let model = mini_model();
        let mut im = mini_instances();
        let before = im.clone();
        let err = im
            .apply_update(
                &[
                    PropertyWrite {
                        instance: "Cell#0".into(),
                        property: "level".into(),
                        value: Value::Int(10),
                    },
                    PropertyWrite {
                        instance: "Cell#1".into(),
                        property: "level".into(),
                        value: Value::Int(101),
                    },
                ],
                &model,
            )
            .unwrap_err();
        assert!(err.iter().any(|v| v.constraint == "LevelInRange"));
        // The first (individually valid) write must not have landed.
        assert_eq!(im, before);
    }

    #[test]
    fn bool_constraints_evaluate_against_each_context_instance() {
        let mut model = mini_model();
        model.constraints.push(Constraint {
            id: "HealthyCell".into(),
            context: "Cell".into(),
            kind: ConstraintKind::BoolExpr(Expr::bin(
                crate::model::BinOp::Gt,
                Expr::Path(vec!["level".into()]),
                Expr::lit_int(5),
            )),
        });
        let mut im = mini_instances();
        assert!(im.check_constraints(&model).is_empty());
        im.instance_mut("Cell#1").unwrap().properties.insert("level".into(), Value::Int(2));
        let v = im.check_constraints(&model);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, "HealthyCell");
        assert_eq!(v[0].instance, "Cell#1");
    }
}
