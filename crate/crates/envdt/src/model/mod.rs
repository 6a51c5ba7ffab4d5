//! In-memory representation of an environment model.
//!
//! A model pairs a structural view (component classes with properties,
//! associations, signal receptions, and constraints) with a behavioural view
//! (hierarchical state machines whose transitions carry optional signal
//! triggers and belief annotations). Everything here is plain data: the
//! text format lives in [`crate::dsl`], execution in [`crate::engine`].
//!
//! Identity rules used throughout the crate:
//!
//! * States and transitions are identified by their declared names, unique
//!   within a machine.
//! * An *event* is the triple (machine, transition, signal) for every
//!   transition that declares a trigger; it has no separate declaration.
//! * An *opaque behaviour* is one non-empty `entry`, `do`, or `exit` block.

mod census;
mod expr;
mod validate;

pub use census::{element_census, flatten_elements, Census, FlatElement};
pub use expr::{BinOp, Expr, UnOp, Value};
pub use validate::{validate_model, Diagnostic, Severity, ValidationReport};

use serde::{Deserialize, Serialize};

use crate::instance::Constraint;
use crate::stoch::DistributionSpec;

/// Closed taxonomy of environment stereotypes applicable to classes and
/// states. There are exactly seven kinds; models cannot add their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stereotype {
    Subcomponent,
    Power,
    Sensor,
    Network,
    Interactable,
    User,
    Feature,
}

impl Stereotype {
    /// All seven kinds in a fixed order.
    pub const ALL: [Stereotype; 7] = [
        Stereotype::Subcomponent,
        Stereotype::Power,
        Stereotype::Sensor,
        Stereotype::Network,
        Stereotype::Interactable,
        Stereotype::User,
        Stereotype::Feature,
    ];

    /// The name as written in the text format, e.g. `Power`.
    pub fn name(self) -> &'static str {
        match self {
            Stereotype::Subcomponent => "Subcomponent",
            Stereotype::Power => "Power",
            Stereotype::Sensor => "Sensor",
            Stereotype::Network => "Network",
            Stereotype::Interactable => "Interactable",
            Stereotype::User => "User",
            Stereotype::Feature => "Feature",
        }
    }

    /// Inverse of [`Stereotype::name`].
    pub fn from_name(s: &str) -> Option<Stereotype> {
        Stereotype::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for Stereotype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Severity class of a signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignalCategory {
    Info,
    Warning,
    Error,
}

impl SignalCategory {
    pub fn name(self) -> &'static str {
        match self {
            SignalCategory::Info => "info",
            SignalCategory::Warning => "warning",
            SignalCategory::Error => "error",
        }
    }

    pub fn from_name(s: &str) -> Option<SignalCategory> {
        match s {
            "info" => Some(SignalCategory::Info),
            "warning" => Some(SignalCategory::Warning),
            "error" => Some(SignalCategory::Error),
            _ => None,
        }
    }
}

impl std::fmt::Display for SignalCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A signal a component can emit towards the digital twin.
///
/// Thirteen library signals have fixed names and categories; everything else
/// is a [`SignalKind::UserInteraction`] with a free-form label and an
/// explicit category (defaulting to `info` in the text format).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignalKind {
    // info
    CartridgeInserted,
    ConnectionChanged,
    FullBattery,
    // warning
    LowBattery,
    WeakConnection,
    CartridgeEmpty,
    // error
    NoPower,
    DeadBattery,
    VerifyFail,
    DeliveryFail,
    DeviceError,
    SensorError,
    NoConnection,
    /// A signal outside the library, e.g. a button press or an
    /// application-specific fault.
    UserInteraction { label: String, category: SignalCategory },
}

impl SignalKind {
    /// The thirteen library signals in declaration order.
    pub const LIBRARY: [SignalKind; 13] = [
        SignalKind::CartridgeInserted,
        SignalKind::ConnectionChanged,
        SignalKind::FullBattery,
        SignalKind::LowBattery,
        SignalKind::WeakConnection,
        SignalKind::CartridgeEmpty,
        SignalKind::NoPower,
        SignalKind::DeadBattery,
        SignalKind::VerifyFail,
        SignalKind::DeliveryFail,
        SignalKind::DeviceError,
        SignalKind::SensorError,
        SignalKind::NoConnection,
    ];

    /// Fixed severity for library signals, declared severity for user
    /// interactions.
    pub fn category(&self) -> SignalCategory {
        match self {
            SignalKind::CartridgeInserted
            | SignalKind::ConnectionChanged
            | SignalKind::FullBattery => SignalCategory::Info,
            SignalKind::LowBattery | SignalKind::WeakConnection | SignalKind::CartridgeEmpty => {
                SignalCategory::Warning
            }
            SignalKind::NoPower
            | SignalKind::DeadBattery
            | SignalKind::VerifyFail
            | SignalKind::DeliveryFail
            | SignalKind::DeviceError
            | SignalKind::SensorError
            | SignalKind::NoConnection => SignalCategory::Error,
            SignalKind::UserInteraction { category, .. } => *category,
        }
    }

    /// The signal name: the library identifier, or the user label.
    pub fn name(&self) -> &str {
        match self {
            SignalKind::CartridgeInserted => "CartridgeInserted",
            SignalKind::ConnectionChanged => "ConnectionChanged",
            SignalKind::FullBattery => "FullBattery",
            SignalKind::LowBattery => "LowBattery",
            SignalKind::WeakConnection => "WeakConnection",
            SignalKind::CartridgeEmpty => "CartridgeEmpty",
            SignalKind::NoPower => "NoPower",
            SignalKind::DeadBattery => "DeadBattery",
            SignalKind::VerifyFail => "VerifyFail",
            SignalKind::DeliveryFail => "DeliveryFail",
            SignalKind::DeviceError => "DeviceError",
            SignalKind::SensorError => "SensorError",
            SignalKind::NoConnection => "NoConnection",
            SignalKind::UserInteraction { label, .. } => label,
        }
    }

    /// Look up a library signal by its fixed name.
    pub fn from_library_name(s: &str) -> Option<SignalKind> {
        SignalKind::LIBRARY.into_iter().find(|k| k.name() == s)
    }

    pub fn is_library(&self) -> bool {
        !matches!(self, SignalKind::UserInteraction { .. })
    }
}

impl std::fmt::Display for SignalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Primitive type of a class property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PropertyType {
    Int,
    Real,
    Bool,
    Str,
    /// Closed set of variant names.
    Enum(Vec<String>),
}

impl PropertyType {
    pub fn keyword(&self) -> &'static str {
        match self {
            PropertyType::Int => "int",
            PropertyType::Real => "real",
            PropertyType::Bool => "bool",
            PropertyType::Str => "string",
            PropertyType::Enum(_) => "enum",
        }
    }
}

/// A property declaration, optionally bounded (`in [lo, hi]`) and carrying
/// a free-form unit such as `percent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyDecl {
    pub name: String,
    pub ty: PropertyType,
    pub range: Option<(Value, Value)>,
    pub unit: Option<String>,
}

/// A directed association from the owning class to `target`, with link
/// multiplicity `lower..upper` per source instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssocDecl {
    pub role: String,
    pub target: String,
    pub lower: u32,
    pub upper: u32,
}

/// A component class of the environment (or, when `dt_side` is set, a
/// digital-twin-side class the environment merely touches).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentClass {
    pub name: String,
    pub stereotypes: Vec<Stereotype>,
    pub properties: Vec<PropertyDecl>,
    pub receptions: Vec<SignalKind>,
    pub assocs: Vec<AssocDecl>,
    /// Name of the machine that is this class's classifier behaviour.
    pub owned_behavior: Option<String>,
    /// True for classes on the twin side of the boundary; these are excluded
    /// from the element census.
    pub dt_side: bool,
}

/// Belief annotation of an uncertain transition: the modeller's degree of
/// confidence plus an optional per-transition distribution override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefAnnotation {
    pub degree: f64,
    pub dist: Option<DistributionSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateKind {
    Initial,
    Simple,
    Final,
}

/// One statement of the opaque-behaviour mini-language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Statement {
    /// `set path = expr;` — assign a property reachable from the owning
    /// machine's bound instance.
    Set { path: Vec<String>, expr: Expr },
    /// `rand path in [lo, hi];` — draw uniformly within the bounds.
    Rand { path: Vec<String>, lo: Value, hi: Value },
    /// `emit Signal;` — send a signal envelope outside any transition.
    Emit(SignalKind),
    /// `log "text";`
    Log(String),
    /// `wait ms;` — advance simulated time (skipped, scaled, or slept
    /// depending on the run configuration).
    Wait(u64),
}

/// A non-empty `entry`, `do`, or `exit` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBlock {
    pub statements: Vec<Statement>,
}

/// Which of the three behaviour slots a block occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BehaviorSlot {
    Entry,
    DoActivity,
    Exit,
}

impl BehaviorSlot {
    pub fn name(self) -> &'static str {
        match self {
            BehaviorSlot::Entry => "entry",
            BehaviorSlot::DoActivity => "do",
            BehaviorSlot::Exit => "exit",
        }
    }
}

/// A state of a behaviour machine. Initial and final states are bare:
/// validation rejects behaviours or submachines on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub name: String,
    pub kind: StateKind,
    pub stereotypes: Vec<Stereotype>,
    pub entry: Option<ActionBlock>,
    pub do_activity: Option<ActionBlock>,
    pub exit: Option<ActionBlock>,
    /// Machine launched concurrently when this state is first entered.
    pub submachine: Option<String>,
}

impl State {
    fn bare(name: &str, kind: StateKind) -> State {
        State {
            name: name.to_string(),
            kind,
            stereotypes: Vec::new(),
            entry: None,
            do_activity: None,
            exit: None,
            submachine: None,
        }
    }

    /// Creates the implicit initial pseudostate.
    pub fn initial() -> State {
        State::bare(INITIAL_STATE, StateKind::Initial)
    }

    /// Creates a simple state with no behaviours or stereotypes.
    pub fn simple(name: &str) -> State {
        State::bare(name, StateKind::Simple)
    }

    /// Creates a bare final state with the given name.
    pub fn final_state(name: &str) -> State {
        State::bare(name, StateKind::Final)
    }

    /// The three behaviour slots in execution order, with their contents.
    pub fn behaviors(&self) -> impl Iterator<Item = (BehaviorSlot, &ActionBlock)> {
        [
            (BehaviorSlot::Entry, self.entry.as_ref()),
            (BehaviorSlot::DoActivity, self.do_activity.as_ref()),
            (BehaviorSlot::Exit, self.exit.as_ref()),
        ]
        .into_iter()
        .filter_map(|(slot, block)| block.map(|b| (slot, b)))
    }
}

/// Reserved name of the implicit initial pseudostate of every machine.
pub const INITIAL_STATE: &str = "initial";

/// A transition `source -> target`, optionally firing a signal (`trigger`)
/// and optionally annotated as uncertain (`belief`). A transition without a
/// belief annotation is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub name: String,
    pub source: String,
    pub target: String,
    pub trigger: Option<SignalKind>,
    pub belief: Option<BeliefAnnotation>,
}

impl Transition {
    pub fn is_uncertain(&self) -> bool {
        self.belief.is_some()
    }
}

/// A hierarchical state machine owned by a component class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorMachine {
    pub name: String,
    pub owner_class: String,
    pub states: Vec<State>,
    pub transitions: Vec<Transition>,
}

impl BehaviorMachine {
    pub fn state(&self, name: &str) -> Option<&State> {
        self.states.iter().find(|s| s.name == name)
    }

    /// The unique initial pseudostate (validation guarantees exactly one).
    pub fn initial_state(&self) -> Option<&State> {
        self.states.iter().find(|s| s.kind == StateKind::Initial)
    }

    /// Outgoing transitions of `state` in declaration order. Declaration
    /// order is semantic: it breaks likelihood ties during execution.
    pub fn outgoing<'a>(&'a self, state: &'a str) -> impl Iterator<Item = &'a Transition> + 'a {
        self.transitions.iter().filter(move |t| t.source == state)
    }
}

/// A complete parsed environment model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentModel {
    pub name: String,
    pub classes: Vec<ComponentClass>,
    pub constraints: Vec<Constraint>,
    pub machines: Vec<BehaviorMachine>,
}

impl EnvironmentModel {
    pub fn class(&self, name: &str) -> Option<&ComponentClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn machine(&self, name: &str) -> Option<&BehaviorMachine> {
        self.machines.iter().find(|m| m.name == name)
    }

    /// Names of twin-side classes.
    pub fn dt_class_names(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().filter(|c| c.dt_side).map(|c| c.name.as_str())
    }

    /// The class stereotyped `Feature`, i.e. the device whose machine roots
    /// the simulation. Validation guarantees uniqueness.
    pub fn device_class(&self) -> Option<&ComponentClass> {
        self.classes
            .iter()
            .find(|c| !c.dt_side && c.stereotypes.contains(&Stereotype::Feature))
    }

    /// The machine the simulation starts: the device class's owned
    /// behaviour.
    pub fn root_machine(&self) -> Option<&BehaviorMachine> {
        let device = self.device_class()?;
        self.machine(device.owned_behavior.as_deref()?)
    }
}

/// Stable identifier of a countable model element.
///
/// The textual forms are `state:<machine>/<state>`,
/// `trans:<machine>/<transition>`, `event:<machine>/<transition>/<signal>`
/// and `beh:<machine>/<state>/<entry|do|exit>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ElementId(pub String);

impl ElementId {
    pub fn state(machine: &str, state: &str) -> ElementId {
        ElementId(format!("state:{machine}/{state}"))
    }

    pub fn transition(machine: &str, transition: &str) -> ElementId {
        ElementId(format!("trans:{machine}/{transition}"))
    }

    pub fn event(machine: &str, transition: &str, signal: &SignalKind) -> ElementId {
        ElementId(format!("event:{machine}/{transition}/{}", signal.name()))
    }

    pub fn behavior(machine: &str, state: &str, slot: BehaviorSlot) -> ElementId {
        ElementId(format!("beh:{machine}/{state}/{}", slot.name()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for ElementId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Kind discriminator for [`ElementId`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    State,
    Transition,
    Event,
    Behavior,
}
