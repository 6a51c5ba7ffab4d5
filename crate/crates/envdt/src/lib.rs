//! envdt — stochastic simulation of medical-device *environment* models.
//!
//! A device under test (the digital twin) never runs in isolation: batteries
//! drain, networks drop, cartridges run empty, and people press buttons at
//! the wrong moment. envdt executes explicit models of that environment —
//! hierarchical state machines annotated with belief degrees and probability
//! distributions — and streams the signal events they generate to a twin
//! endpoint, measuring how much of the modelled behaviour each configuration
//! exercises.
//!
//! The crate is organised as a pipeline:
//!
//! * [`model`] — the in-memory representation: component classes, signal
//!   taxonomy, behaviour machines, and structural validation plus element
//!   census.
//! * [`dsl`] — the `.envdt` text format: lexer, parser, and the canonical
//!   printer (parse ∘ print is the identity on valid models).
//! * [`stoch`] — seeded, splittable random streams and the ten supported
//!   probability distributions with their unit-interval likelihood mappings.
//! * [`instance`] — constraint-directed instantiation of class diagrams into
//!   runtime object graphs, plus guarded updates against those constraints.
//! * [`engine`] — the discrete-event executor: concurrent machine runtimes,
//!   likelihood-weighted transition selection, and replayable traces.
//! * [`bridge`] — signal-envelope dispatch to an in-process or TCP twin
//!   endpoint, with at-least-once delivery and a reference twin stub.
//! * [`analytics`] — model coverage, Simpson diversity, and aggregation
//!   across repeated runs.
//! * [`experiment`] — resumable device × distribution × repetition matrices
//!   and their CSV summaries.

pub mod analytics;
pub mod bridge;
pub mod dsl;
pub mod engine;
pub mod experiment;
pub mod instance;
pub mod model;
pub mod stoch;
