//! Trace replay: an independent validity check and counter.
//!
//! Replaying walks a recorded trace against the model it claims to come
//! from and re-derives everything a consumer might count — visited
//! elements, signal tallies, step and event totals — while checking the
//! trace contract record by record: sequence numbers are contiguous, the
//! clock never runs backwards, every element id exists in the model,
//! every transition leaves the state its machine was actually in, every
//! trigger dispatch follows its transition, and (in once-only runs) no
//! element repeats. Given the starting instance configuration it also
//! re-applies every committed write and confirms the constraint gate
//! would have made the same accept/reject calls.
//!
//! The replayer shares no code with the engine's bookkeeping, so the two
//! disagreeing flags a bug in either.

use std::collections::{BTreeMap, BTreeSet};

use crate::instance::{InstanceModel, PropertyWrite};
use crate::model::{ElementId, EnvironmentModel, Value, INITIAL_STATE};

use super::trace::{ExecutionTrace, RecordKind, TraceRecord};

/// What a trace adds up to, as re-derived by replay.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplaySummary {
    /// Every state, transition, event, and behaviour the run exercised.
    pub visited: BTreeSet<ElementId>,
    /// Dispatched signals by name — triggers and emits.
    pub signal_counts: BTreeMap<String, u64>,
    /// Triggered signals whose transition carried a belief annotation.
    pub uncertain_signal_counts: BTreeMap<String, u64>,
    /// Transition executions.
    pub steps: u64,
    /// Signal dispatches.
    pub events: u64,
    pub end_reason: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("incomplete trace: {0}")]
    Incomplete(String),
    #[error("record {found} where sequence number {expected} was expected")]
    BadSeq { expected: u64, found: u64 },
    #[error("record {seq}: clock ran backwards")]
    TimeRegression { seq: u64 },
    #[error("record {seq}: machine '{machine}' was never started")]
    UnknownMachine { seq: u64, machine: String },
    #[error("record {seq}: element '{element}' is not in the model")]
    UnknownElement { seq: u64, element: String },
    #[error("record {seq}: machine '{machine}' is at '{expected}' but the trace says '{found}'")]
    SourceMismatch { seq: u64, machine: String, expected: String, found: String },
    #[error("record {seq}: element '{element}' repeats in a once-only run")]
    DuplicateElement { seq: u64, element: String },
    #[error("record {seq}: update does not replay: {message}")]
    UpdateFailed { seq: u64, message: String },
    #[error("record {seq}: {message}")]
    Malformed { seq: u64, message: String },
}

struct Track {
    machine: String,
    at: String,
    /// Transition name whose trigger dispatch is still pending.
    last_transition: Option<String>,
    halted: bool,
}

fn detail_str<'r>(r: &'r TraceRecord, key: &str) -> Result<&'r str, ReplayError> {
    r.detail.get(key).and_then(|v| v.as_str()).ok_or_else(|| ReplayError::Malformed {
        seq: r.seq,
        message: format!("missing detail field '{key}'"),
    })
}

fn detail_u64(r: &TraceRecord, key: &str) -> Result<u64, ReplayError> {
    r.detail.get(key).and_then(|v| v.as_u64()).ok_or_else(|| ReplayError::Malformed {
        seq: r.seq,
        message: format!("missing detail field '{key}'"),
    })
}

fn split_element<'e>(
    r: &TraceRecord,
    element: &'e str,
    prefix: &str,
    parts: usize,
) -> Result<Vec<&'e str>, ReplayError> {
    let malformed = || ReplayError::Malformed {
        seq: r.seq,
        message: format!("element '{element}' is not a '{prefix}' id"),
    };
    let rest = element.strip_prefix(prefix).ok_or_else(malformed)?;
    let pieces: Vec<&str> = rest.splitn(parts, '/').collect();
    if pieces.len() == parts && pieces.iter().all(|p| !p.is_empty()) {
        Ok(pieces)
    } else {
        Err(malformed())
    }
}

/// Replays `trace` against `model`, returning the re-derived counts.
///
/// `start` is the instance configuration the run began from; when given,
/// every update record is re-applied through the constraint gate and
/// every reject record is confirmed to be a genuine violation.
pub fn replay(
    trace: &ExecutionTrace,
    model: &EnvironmentModel,
    start: Option<&InstanceModel>,
) -> Result<ReplaySummary, ReplayError> {
    let meta = trace
        .meta()
        .ok_or_else(|| ReplayError::Incomplete("no run-meta record at the start".into()))?;
    if trace.end().is_none() {
        return Err(ReplayError::Incomplete("no end record at the close".into()));
    }
    let once_only = meta.detail.get("onceOnly").and_then(|v| v.as_bool()).unwrap_or(true);

    let elements: BTreeSet<String> =
        crate::model::flatten_elements(model).into_iter().map(|e| e.id.0).collect();

    let mut im = start.cloned();
    let mut tracks: BTreeMap<String, Track> = BTreeMap::new();
    let mut summary = ReplaySummary::default();
    let mut prev_t = 0u64;

    for (i, r) in trace.iter().enumerate() {
        if r.seq != i as u64 {
            return Err(ReplayError::BadSeq { expected: i as u64, found: r.seq });
        }
        if r.t < prev_t {
            return Err(ReplayError::TimeRegression { seq: r.seq });
        }
        prev_t = r.t;

        if r.kind == RecordKind::RunMeta && i != 0 {
            return Err(ReplayError::Malformed {
                seq: r.seq,
                message: "run-meta after the first record".into(),
            });
        }
        if r.kind == RecordKind::End && i + 1 != trace.len() {
            return Err(ReplayError::Malformed {
                seq: r.seq,
                message: "records after the end record".into(),
            });
        }
        if matches!(r.kind, RecordKind::RunMeta | RecordKind::End) {
            if r.kind == RecordKind::End {
                summary.end_reason = detail_str(r, "reason")?.to_string();
                if detail_u64(r, "steps")? != summary.steps {
                    return Err(ReplayError::Malformed {
                        seq: r.seq,
                        message: format!(
                            "end record claims {} steps, trace holds {}",
                            detail_u64(r, "steps")?,
                            summary.steps
                        ),
                    });
                }
                if detail_u64(r, "events")? != summary.events {
                    return Err(ReplayError::Malformed {
                        seq: r.seq,
                        message: format!(
                            "end record claims {} events, trace holds {}",
                            detail_u64(r, "events")?,
                            summary.events
                        ),
                    });
                }
            }
            continue;
        }

        if r.kind == RecordKind::Start {
            let machine = detail_str(r, "machine")?.to_string();
            if model.machine(&machine).is_none() {
                return Err(ReplayError::UnknownMachine { seq: r.seq, machine });
            }
            if r.machine.is_empty() || tracks.contains_key(&r.machine) {
                return Err(ReplayError::Malformed {
                    seq: r.seq,
                    message: format!("runtime '{}' started twice", r.machine),
                });
            }
            tracks.insert(
                r.machine.clone(),
                Track {
                    machine,
                    at: INITIAL_STATE.to_string(),
                    last_transition: None,
                    halted: false,
                },
            );
            continue;
        }

        let track = tracks.get_mut(&r.machine).ok_or_else(|| ReplayError::UnknownMachine {
            seq: r.seq,
            machine: r.machine.clone(),
        })?;
        if track.halted {
            return Err(ReplayError::Malformed {
                seq: r.seq,
                message: format!("record for '{}' after it halted", r.machine),
            });
        }

        let visit = |element: &str, summary: &mut ReplaySummary| -> Result<(), ReplayError> {
            if !elements.contains(element) {
                return Err(ReplayError::UnknownElement {
                    seq: r.seq,
                    element: element.to_string(),
                });
            }
            let added = summary.visited.insert(ElementId(element.to_string()));
            if once_only && !added {
                return Err(ReplayError::DuplicateElement {
                    seq: r.seq,
                    element: element.to_string(),
                });
            }
            Ok(())
        };

        match r.kind {
            RecordKind::State => {
                let parts = split_element(r, &r.element, "state:", 2)?;
                if parts[0] != track.machine {
                    return Err(ReplayError::Malformed {
                        seq: r.seq,
                        message: format!("state belongs to '{}', not '{}'", parts[0], track.machine),
                    });
                }
                visit(&r.element, &mut summary)?;
                if parts[1] != track.at {
                    return Err(ReplayError::SourceMismatch {
                        seq: r.seq,
                        machine: r.machine.clone(),
                        expected: track.at.clone(),
                        found: parts[1].to_string(),
                    });
                }
                track.last_transition = None;
            }
            RecordKind::Behavior => {
                let parts = split_element(r, &r.element, "beh:", 3)?;
                if parts[0] != track.machine || parts[1] != track.at {
                    return Err(ReplayError::Malformed {
                        seq: r.seq,
                        message: format!(
                            "behaviour of '{}/{}' ran while '{}' was at '{}'",
                            parts[0], parts[1], r.machine, track.at
                        ),
                    });
                }
                visit(&r.element, &mut summary)?;
                track.last_transition = None;
            }
            RecordKind::Transition => {
                let parts = split_element(r, &r.element, "trans:", 2)?;
                if parts[0] != track.machine {
                    return Err(ReplayError::Malformed {
                        seq: r.seq,
                        message: format!(
                            "transition belongs to '{}', not '{}'",
                            parts[0], track.machine
                        ),
                    });
                }
                visit(&r.element, &mut summary)?;
                let from = detail_str(r, "from")?;
                let to = detail_str(r, "to")?;
                if from != track.at {
                    return Err(ReplayError::SourceMismatch {
                        seq: r.seq,
                        machine: r.machine.clone(),
                        expected: track.at.clone(),
                        found: from.to_string(),
                    });
                }
                let decl = model
                    .machine(&track.machine)
                    .and_then(|m| m.transitions.iter().find(|t| t.name == parts[1]))
                    .ok_or_else(|| ReplayError::UnknownElement {
                        seq: r.seq,
                        element: r.element.clone(),
                    })?;
                if decl.source != from || decl.target != to {
                    return Err(ReplayError::Malformed {
                        seq: r.seq,
                        message: format!(
                            "transition '{}' runs {}->{} in the model, {from}->{to} in the trace",
                            parts[1], decl.source, decl.target
                        ),
                    });
                }
                track.at = to.to_string();
                track.last_transition = Some(parts[1].to_string());
                summary.steps += 1;
            }
            RecordKind::Event => {
                let parts = split_element(r, &r.element, "event:", 3)?;
                if parts[0] != track.machine {
                    return Err(ReplayError::Malformed {
                        seq: r.seq,
                        message: format!("event belongs to '{}', not '{}'", parts[0], track.machine),
                    });
                }
                if track.last_transition.as_deref() != Some(parts[1]) {
                    return Err(ReplayError::Malformed {
                        seq: r.seq,
                        message: format!(
                            "event of transition '{}' does not follow that transition",
                            parts[1]
                        ),
                    });
                }
                track.last_transition = None;
                visit(&r.element, &mut summary)?;
                let signal = detail_str(r, "signal")?;
                if signal != parts[2] {
                    return Err(ReplayError::Malformed {
                        seq: r.seq,
                        message: format!("event id names '{}', detail names '{signal}'", parts[2]),
                    });
                }
                *summary.signal_counts.entry(signal.to_string()).or_insert(0) += 1;
                let uncertain =
                    r.detail.get("uncertain").and_then(|v| v.as_bool()).unwrap_or(false);
                if uncertain {
                    *summary.uncertain_signal_counts.entry(signal.to_string()).or_insert(0) += 1;
                }
                summary.events += 1;
            }
            RecordKind::Emit => {
                // The element names the enclosing behaviour; an emit is a
                // dispatch, not a fresh coverage claim.
                if !elements.contains(&r.element) {
                    return Err(ReplayError::UnknownElement {
                        seq: r.seq,
                        element: r.element.clone(),
                    });
                }
                let signal = detail_str(r, "signal")?;
                *summary.signal_counts.entry(signal.to_string()).or_insert(0) += 1;
                summary.events += 1;
            }
            RecordKind::Update => {
                if let Some(im) = im.as_mut() {
                    let write = PropertyWrite {
                        instance: detail_str(r, "instance")?.to_string(),
                        property: detail_str(r, "property")?.to_string(),
                        value: value_detail(r)?,
                    };
                    im.apply_update(std::slice::from_ref(&write), model).map_err(
                        |violations| ReplayError::UpdateFailed {
                            seq: r.seq,
                            message: violations
                                .iter()
                                .map(|v| v.to_string())
                                .collect::<Vec<_>>()
                                .join("; "),
                        },
                    )?;
                }
            }
            RecordKind::Reject => {
                if let Some(im) = im.as_ref() {
                    let write = PropertyWrite {
                        instance: detail_str(r, "instance")?.to_string(),
                        property: detail_str(r, "property")?.to_string(),
                        value: value_detail(r)?,
                    };
                    let mut probe = im.clone();
                    if probe.apply_update(std::slice::from_ref(&write), model).is_ok() {
                        return Err(ReplayError::Malformed {
                            seq: r.seq,
                            message: "rejected write would have been accepted".into(),
                        });
                    }
                }
            }
            RecordKind::Halt => {
                let reason = detail_str(r, "reason")?;
                if !matches!(reason, "final" | "exhausted" | "fault") {
                    return Err(ReplayError::Malformed {
                        seq: r.seq,
                        message: format!("unknown halt reason '{reason}'"),
                    });
                }
                track.halted = true;
            }
            RecordKind::Log | RecordKind::Fault => {}
            RecordKind::RunMeta | RecordKind::Start | RecordKind::End => unreachable!(),
        }
    }

    Ok(summary)
}

fn value_detail(r: &TraceRecord) -> Result<Value, ReplayError> {
    let raw = r.detail.get("value").cloned().ok_or_else(|| ReplayError::Malformed {
        seq: r.seq,
        message: "missing detail field 'value'".into(),
    })?;
    serde_json::from_value(raw).map_err(|e| ReplayError::Malformed {
        seq: r.seq,
        message: format!("unreadable value: {e}"),
    })
}
