//! Element census and the flat element enumeration used by coverage.
//!
//! Counting rules (documented here once, relied on everywhere):
//!
//! * Structural counts (classes, properties, class stereotypes, receptions)
//!   cover environment classes only — twin-side (`dt`) classes are the
//!   boundary, not the environment.
//! * `class_stereotypes` counts *applications*: a class annotated
//!   `<<Feature, Interactable>>` contributes two.
//! * `machine_stereotypes` counts *unique kinds* applied to states across
//!   the whole model, so it can never exceed seven.
//! * `states` excludes initial pseudostates (they are where execution
//!   starts, not something a run can meaningfully cover); final states
//!   count.
//! * `all_events` counts transitions with a trigger; `uncertain_events`
//!   those whose transition also carries a belief annotation.
//! * `opaque_behaviors` counts non-empty `entry`/`do`/`exit` blocks.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ElementId, ElementKind, EnvironmentModel, StateKind};

/// Element counts for one model, one field per census column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub classes: usize,
    pub properties: usize,
    pub class_stereotypes: usize,
    pub receptions: usize,
    pub constraints: usize,
    pub machines: usize,
    pub machine_stereotypes: usize,
    pub states: usize,
    pub transitions: usize,
    pub all_events: usize,
    pub uncertain_events: usize,
    pub opaque_behaviors: usize,
}

impl Census {
    /// Total number of coverable elements: the denominator of model
    /// coverage and the length of [`flatten_elements`].
    pub fn coverable_total(&self) -> usize {
        self.states + self.transitions + self.all_events + self.opaque_behaviors
    }
}

impl std::fmt::Display for Census {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "classes             {:>6}", self.classes)?;
        writeln!(f, "properties          {:>6}", self.properties)?;
        writeln!(f, "class stereotypes   {:>6}", self.class_stereotypes)?;
        writeln!(f, "signal receptions   {:>6}", self.receptions)?;
        writeln!(f, "constraints         {:>6}", self.constraints)?;
        writeln!(f, "state machines      {:>6}", self.machines)?;
        writeln!(f, "machine stereotypes {:>6}", self.machine_stereotypes)?;
        writeln!(f, "states              {:>6}", self.states)?;
        writeln!(f, "transitions         {:>6}", self.transitions)?;
        writeln!(f, "all events          {:>6}", self.all_events)?;
        writeln!(f, "uncertain events    {:>6}", self.uncertain_events)?;
        write!(f, "opaque behaviors    {:>6}", self.opaque_behaviors)
    }
}

/// Counts every census column for `model`.
pub fn element_census(model: &EnvironmentModel) -> Census {
    let env_classes = || model.classes.iter().filter(|c| !c.dt_side);

    let machine_stereotypes: BTreeSet<_> = model
        .machines
        .iter()
        .flat_map(|m| m.states.iter())
        .flat_map(|s| s.stereotypes.iter().copied())
        .collect();

    let mut states = 0;
    let mut transitions = 0;
    let mut all_events = 0;
    let mut uncertain_events = 0;
    let mut opaque_behaviors = 0;
    for machine in &model.machines {
        states += machine.states.iter().filter(|s| s.kind != StateKind::Initial).count();
        transitions += machine.transitions.len();
        for t in &machine.transitions {
            if t.trigger.is_some() {
                all_events += 1;
                if t.belief.is_some() {
                    uncertain_events += 1;
                }
            }
        }
        opaque_behaviors += machine.states.iter().map(|s| s.behaviors().count()).sum::<usize>();
    }

    Census {
        classes: env_classes().count(),
        properties: env_classes().map(|c| c.properties.len()).sum(),
        class_stereotypes: env_classes().map(|c| c.stereotypes.len()).sum(),
        receptions: env_classes().map(|c| c.receptions.len()).sum(),
        constraints: model.constraints.len(),
        machines: model.machines.len(),
        machine_stereotypes: machine_stereotypes.len(),
        states,
        transitions,
        all_events,
        uncertain_events,
        opaque_behaviors,
    }
}

/// One entry of the flat element enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatElement {
    pub id: ElementId,
    pub kind: ElementKind,
}

/// Enumerates every coverable element in a deterministic, declaration-driven
/// order: all states, then all transitions, then all events, then all opaque
/// behaviours, each following machine declaration order.
///
/// The result is a bijection onto the census: its length equals
/// [`Census::coverable_total`] and no id repeats.
pub fn flatten_elements(model: &EnvironmentModel) -> Vec<FlatElement> {
    let mut out = Vec::new();
    for machine in &model.machines {
        for state in &machine.states {
            if state.kind != StateKind::Initial {
                out.push(FlatElement {
                    id: ElementId::state(&machine.name, &state.name),
                    kind: ElementKind::State,
                });
            }
        }
    }
    for machine in &model.machines {
        for t in &machine.transitions {
            out.push(FlatElement {
                id: ElementId::transition(&machine.name, &t.name),
                kind: ElementKind::Transition,
            });
        }
    }
    for machine in &model.machines {
        for t in &machine.transitions {
            if let Some(signal) = &t.trigger {
                out.push(FlatElement {
                    id: ElementId::event(&machine.name, &t.name, signal),
                    kind: ElementKind::Event,
                });
            }
        }
    }
    for machine in &model.machines {
        for state in &machine.states {
            for (slot, _) in state.behaviors() {
                out.push(FlatElement {
                    id: ElementId::behavior(&machine.name, &state.name, slot),
                    kind: ElementKind::Behavior,
                });
            }
        }
    }
    out
}
