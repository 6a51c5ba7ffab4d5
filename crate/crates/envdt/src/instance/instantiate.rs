//! Random instantiation of an environment model.
//!
//! Instantiation is rejection sampling at the configuration level: draw a
//! whole candidate (multiplicities and property values), check every
//! constraint, and redraw from the same stream until a candidate passes
//! or the attempt budget runs out. Structure is drawn breadth-first in
//! declaration order, so a given stream always produces the same
//! configuration.

use std::collections::{BTreeMap, VecDeque};

use super::{ComponentInstance, InstanceModel, Violation};
use crate::model::{ComponentClass, EnvironmentModel, PropertyType, Value};
use crate::stoch::RandomStream;

/// Attempt budget used by the command-line tools.
pub const DEFAULT_MAX_ATTEMPTS: u32 = 1000;

#[derive(Debug, thiserror::Error)]
pub enum InstantiateError {
    #[error("no constraint-satisfying configuration in {attempts} attempts; last failure: {last}")]
    ConstraintsUnsatisfied { attempts: u32, last: String },
    #[error("model has no environment-side classes to instantiate")]
    EmptyModel,
}

/// Draws a constraint-satisfying configuration, retrying up to
/// `max_attempts` times.
pub fn instantiate(
    model: &EnvironmentModel,
    params: &BTreeMap<String, i64>,
    stream: &mut RandomStream,
    max_attempts: u32,
) -> Result<InstanceModel, InstantiateError> {
    if model.classes.iter().all(|c| c.dt_side) {
        return Err(InstantiateError::EmptyModel);
    }
    let mut last: Vec<Violation> = Vec::new();
    for _ in 0..max_attempts.max(1) {
        let candidate = draw_candidate(model, params, stream);
        let violations = candidate.check_constraints(model);
        if violations.is_empty() {
            return Ok(candidate);
        }
        last = violations;
    }
    Err(InstantiateError::ConstraintsUnsatisfied {
        attempts: max_attempts.max(1),
        last: last.first().map(|v| v.to_string()).unwrap_or_else(|| "unknown".into()),
    })
}

fn draw_candidate(
    model: &EnvironmentModel,
    params: &BTreeMap<String, i64>,
    stream: &mut RandomStream,
) -> InstanceModel {
    let env_class = |name: &str| model.class(name).filter(|c| !c.dt_side);

    // Root classes: environment classes no environment association targets.
    let targeted: Vec<&str> = model
        .classes
        .iter()
        .filter(|c| !c.dt_side)
        .flat_map(|c| c.assocs.iter())
        .filter(|a| env_class(&a.target).is_some())
        .map(|a| a.target.as_str())
        .collect();

    let mut im = InstanceModel {
        model_name: model.name.clone(),
        params: params.clone(),
        instances: Vec::new(),
    };
    let mut ordinals: BTreeMap<String, usize> = BTreeMap::new();
    let mut queue: VecDeque<usize> = VecDeque::new();

    fn create(
        im: &mut InstanceModel,
        ordinals: &mut BTreeMap<String, usize>,
        queue: &mut VecDeque<usize>,
        class: &ComponentClass,
        stream: &mut RandomStream,
    ) -> String {
        let ordinal = *ordinals
            .entry(class.name.clone())
            .and_modify(|o| *o += 1)
            .or_insert(0);
        let id = format!("{}#{}", class.name, ordinal);
        let properties = class
            .properties
            .iter()
            .map(|p| (p.name.clone(), draw_property(p, ordinal, stream)))
            .collect();
        im.instances.push(ComponentInstance {
            id: id.clone(),
            class: class.name.clone(),
            properties,
            links: BTreeMap::new(),
        });
        queue.push_back(im.instances.len() - 1);
        id
    }

    for class in model.classes.iter().filter(|c| !c.dt_side) {
        if !targeted.contains(&class.name.as_str()) {
            create(&mut im, &mut ordinals, &mut queue, class, stream);
        }
    }

    while let Some(idx) = queue.pop_front() {
        let class_name = im.instances[idx].class.clone();
        let class = env_class(&class_name).expect("instances come from env classes");
        for assoc in &class.assocs {
            let Some(target) = env_class(&assoc.target) else { continue };
            let count = stream.next_int_inclusive(assoc.lower as i64, assoc.upper as i64);
            let mut ids = Vec::new();
            for _ in 0..count {
                ids.push(create(&mut im, &mut ordinals, &mut queue, target, stream));
            }
            im.instances[idx].links.insert(assoc.role.clone(), ids);
        }
    }
    im
}

/// Draws one property value. Numeric properties draw uniformly over their
/// declared range (a default span when none is declared); strings are
/// named after their owner and consume no randomness.
fn draw_property(p: &crate::model::PropertyDecl, ordinal: usize, stream: &mut RandomStream) -> Value {
    match &p.ty {
        PropertyType::Int => {
            let (lo, hi) = match &p.range {
                Some((lo, hi)) => (
                    lo.as_f64().unwrap_or(0.0) as i64,
                    hi.as_f64().unwrap_or(100.0) as i64,
                ),
                None => (0, 100),
            };
            Value::Int(stream.next_int_inclusive(lo, hi))
        }
        PropertyType::Real => {
            let (lo, hi) = match &p.range {
                Some((lo, hi)) => (lo.as_f64().unwrap_or(0.0), hi.as_f64().unwrap_or(1.0)),
                None => (0.0, 1.0),
            };
            Value::Real(stream.next_range(lo, hi))
        }
        PropertyType::Bool => Value::Bool(stream.next_unit() < 0.5),
        PropertyType::Str => Value::Str(format!("{}-{}", p.name, ordinal)),
        PropertyType::Enum(variants) => {
            Value::EnumVariant(variants[stream.next_index(variants.len())].clone())
        }
    }
}
