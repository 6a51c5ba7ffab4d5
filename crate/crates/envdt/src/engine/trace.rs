//! Execution traces: the line-delimited record log every run produces.
//!
//! A trace is a sequence of records with six fields in fixed order —
//! `seq`, `t`, `machine`, `kind`, `element`, `detail` — serialised one JSON
//! object per line. `seq` is contiguous from 0; `t` is simulated
//! milliseconds since run start (`wait` statements advance it, nothing else
//! does, so trace bytes do not depend on host timing); `machine` is the
//! runtime label (`MachineName#spawn-ordinal`, empty for run-level
//! records); `element` is the [`crate::model::ElementId`] text when the
//! record covers a model element, empty otherwise; `detail` is
//! record-kind-specific JSON.
//!
//! Every complete trace starts with one `run-meta` record and ends with one
//! `end` record; resumable experiment runs use the presence of `end` as the
//! completion marker.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

/// Discriminator for trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    /// Run header: model, seed, distribution, flags. Always `seq` 0.
    RunMeta,
    /// A machine runtime came into existence (root at run start, others at
    /// submachine launch).
    Start,
    /// A state was entered and recorded (never emitted for initial
    /// pseudostates, nor for pass-through re-entries in once-only mode).
    State,
    /// An opaque behaviour block (entry/do/exit) began executing.
    Behavior,
    /// A transition fired.
    Transition,
    /// A triggered signal was dispatched to the twin sink (follows its
    /// transition record).
    Event,
    /// An `emit` statement dispatched a signal outside any transition.
    Emit,
    /// A `log` statement.
    Log,
    /// A committed instance-model write (`set` or `rand`).
    Update,
    /// A write discarded because it would violate a constraint.
    Reject,
    /// An action failed; the offending machine is aborted.
    Fault,
    /// A machine runtime stopped (final state, exhaustion, or fault).
    Halt,
    /// Run footer: stop reason and totals. Always the last record.
    End,
}

/// One line of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    /// Simulated milliseconds since run start.
    pub t: u64,
    /// Runtime label, `Name#ordinal`; empty for run-level records.
    pub machine: String,
    pub kind: RecordKind,
    /// Element id text, empty when the record covers no model element.
    pub element: String,
    pub detail: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// An ordered record log, one run's worth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutionTrace {
    pub records: Vec<TraceRecord>,
}

impl ExecutionTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The `run-meta` header, if the trace has one.
    pub fn meta(&self) -> Option<&TraceRecord> {
        self.records.first().filter(|r| r.kind == RecordKind::RunMeta)
    }

    /// The `end` footer; its presence marks the run complete.
    pub fn end(&self) -> Option<&TraceRecord> {
        self.records.last().filter(|r| r.kind == RecordKind::End)
    }

    pub fn is_complete(&self) -> bool {
        self.meta().is_some() && self.end().is_some()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TraceRecord> {
        self.records.iter()
    }

    /// Records of one kind, in order.
    pub fn of_kind(&self, kind: RecordKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// Records that dispatched a signal to the twin sink: `event` and
    /// `emit`, in dispatch order. Their count is the conservation total the
    /// bridge and stub are checked against.
    pub fn signal_records(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r.kind, RecordKind::Event | RecordKind::Emit))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("trace records serialise"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        w.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn from_jsonl(text: &str) -> Result<ExecutionTrace, TraceError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(line)
                .map_err(|source| TraceError::Json { line: i + 1, source })?;
            records.push(rec);
        }
        Ok(ExecutionTrace { records })
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<ExecutionTrace, TraceError> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|source| TraceError::Json { line: i + 1, source })?;
            records.push(rec);
        }
        Ok(ExecutionTrace { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seq: u64, kind: RecordKind) -> TraceRecord {
        TraceRecord {
            seq,
            t: 0,
            machine: "M#0".into(),
            kind,
            element: String::new(),
            detail: serde_json::Value::Null,
        }
    }

    #[test]
    fn jsonl_round_trips_and_field_order_is_stable() {
        let trace = ExecutionTrace {
            records: vec![
                TraceRecord {
                    seq: 0,
                    t: 0,
                    machine: String::new(),
                    kind: RecordKind::RunMeta,
                    element: String::new(),
                    detail: serde_json::json!({"seed": 42}),
                },
                TraceRecord {
                    seq: 1,
                    t: 250,
                    machine: "M#0".into(),
                    kind: RecordKind::State,
                    element: "state:M/S".into(),
                    detail: serde_json::Value::Null,
                },
            ],
        };
        let text = trace.to_jsonl();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"seq":0,"t":0,"machine":"","kind":"run-meta","element":"","detail":{"seed":42}}"#
        );
        assert_eq!(ExecutionTrace::from_jsonl(&text).unwrap(), trace);
    }

    #[test]
    fn completion_requires_both_meta_and_end() {
        let mut trace = ExecutionTrace { records: vec![rec(0, RecordKind::RunMeta)] };
        trace.records[0].machine.clear();
        assert!(!trace.is_complete());
        trace.records.push(rec(1, RecordKind::Transition));
        assert!(!trace.is_complete());
        trace.records.push(rec(2, RecordKind::End));
        assert!(trace.is_complete());
    }

    #[test]
    fn bad_lines_are_reported_with_their_line_number() {
        let err = ExecutionTrace::from_jsonl("{\"seq\":0}\nnot json\n").unwrap_err();
        match err {
            TraceError::Json { line, .. } => assert_eq!(line, 1), // missing fields
            other => panic!("unexpected: {other}"),
        }
        let err = ExecutionTrace::from_jsonl(
            "{\"seq\":0,\"t\":0,\"machine\":\"\",\"kind\":\"end\",\"element\":\"\",\"detail\":null}\nnope\n",
        )
        .unwrap_err();
        match err {
            TraceError::Json { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected: {other}"),
        }
    }
}
