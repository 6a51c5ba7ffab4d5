//! Delivery of signal events to a digital-twin endpoint.
//!
//! Every dispatched signal crosses this boundary as a [`SignalEnvelope`]:
//! one JSON object per line, versioned by a leading `v` field, answered by
//! an ack line `{"runId":…,"seq":…}`. Delivery is at-least-once — the
//! dispatcher retries with capped exponential backoff and the receiver
//! deduplicates by `(runId, seq)` — which keeps the conservation property
//! testable: for a completed run the engine trace's dispatches, the acked
//! envelopes, and the stub's event log agree as multisets.
//!
//! The bundled [`TwinStub`] is deliberately small: it ingests envelopes,
//! mirrors property deltas, and reacts to signals with a fixed,
//! non-normative table (error signals degrade its state label, info and
//! warning signals update the mirror). A production twin would replace
//! the table; the stub exists to close the loop and make end-to-end
//! delivery observable in tests and demos.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::{EventSink, SignalEvent};
use crate::model::{SignalCategory, SignalKind, Value};

/// Wire format version this build speaks.
pub const WIRE_VERSION: u32 = 1;

/// One signal event on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SignalEnvelope {
    /// Schema version; always [`WIRE_VERSION`] and serialised first.
    pub v: u32,
    pub run_id: String,
    /// Per-run dispatch ordinal, strictly increasing.
    pub seq: u64,
    /// Runtime label that raised the signal.
    pub machine: String,
    pub signal: String,
    pub category: String,
    /// Bound instance id; empty if the machine had none.
    pub instance: String,
    /// Simulated milliseconds since run start.
    pub t_ms: u64,
    /// Committed property deltas since the previous dispatch.
    pub payload: BTreeMap<String, Value>,
}

impl SignalEnvelope {
    pub fn from_event(run_id: &str, event: &SignalEvent) -> SignalEnvelope {
        SignalEnvelope {
            v: WIRE_VERSION,
            run_id: run_id.to_string(),
            seq: event.seq,
            machine: event.machine.clone(),
            signal: event.signal.name().to_string(),
            category: event.signal.category().name().to_string(),
            instance: event.instance.clone(),
            t_ms: event.t,
            payload: event.payload.clone(),
        }
    }
}

/// Receipt for one delivered envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Ack {
    pub run_id: String,
    pub seq: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error("twin endpoint unavailable after {attempts} attempts: {last}")]
    EndpointUnavailable { attempts: u32, last: String },
    #[error("twin endpoint broke protocol: {0}")]
    BadAck(String),
}

/// One hop to the twin: send an envelope line, get back one reply line.
///
/// An `Err` means the attempt may be retried (the receiver might or might
/// not have seen the line — hence at-least-once); a reply line that is
/// not the matching ack is a protocol error and is not retried.
pub trait TwinEndpoint {
    fn deliver(&mut self, line: &str) -> std::io::Result<String>;
}

/// Retry schedule for failed deliveries: exponential backoff from `base`,
/// doubling up to `cap`, across `max_attempts` total attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub cap: Duration,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> RetryPolicy {
        RetryPolicy {
            base: Duration::from_millis(10),
            cap: Duration::from_millis(200),
            max_attempts: 6,
        }
    }
}

/// Pushes a run's envelopes through an endpoint, in order, retrying on
/// failure. Implements [`EventSink`] so the engine can stream through it
/// live; a delivery that exhausts its retry budget is kept in
/// [`Dispatcher::failure`] and later envelopes are dropped, so the run
/// itself never blocks on a dead twin.
pub struct Dispatcher<E> {
    endpoint: E,
    run_id: String,
    policy: RetryPolicy,
    /// Receipts in delivery order.
    pub acked: Vec<Ack>,
    /// First delivery failure, if any.
    pub failure: Option<DispatchError>,
}

impl<E: TwinEndpoint> Dispatcher<E> {
    pub fn new(run_id: &str, endpoint: E) -> Dispatcher<E> {
        Dispatcher {
            endpoint,
            run_id: run_id.to_string(),
            policy: RetryPolicy::default(),
            acked: Vec::new(),
            failure: None,
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Dispatcher<E> {
        self.policy = policy;
        self
    }

    /// Hands the endpoint back, e.g. to inspect an in-process stub.
    pub fn into_endpoint(self) -> E {
        self.endpoint
    }

    pub fn endpoint_mut(&mut self) -> &mut E {
        &mut self.endpoint
    }

    pub fn dispatch(&mut self, event: &SignalEvent) -> Result<Ack, DispatchError> {
        let envelope = SignalEnvelope::from_event(&self.run_id, event);
        let line = serde_json::to_string(&envelope).expect("envelopes serialise");
        let mut delay = self.policy.base;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.endpoint.deliver(&line) {
                Ok(reply) => {
                    let ack: Ack = serde_json::from_str(&reply)
                        .map_err(|_| DispatchError::BadAck(reply.clone()))?;
                    if ack.run_id != envelope.run_id || ack.seq != envelope.seq {
                        return Err(DispatchError::BadAck(reply));
                    }
                    self.acked.push(ack.clone());
                    return Ok(ack);
                }
                Err(_) if attempt < self.policy.max_attempts => {
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(self.policy.cap);
                }
                Err(e) => {
                    return Err(DispatchError::EndpointUnavailable {
                        attempts: attempt,
                        last: e.to_string(),
                    })
                }
            }
        }
    }
}

impl<E: TwinEndpoint> EventSink for Dispatcher<E> {
    fn notify(&mut self, event: &SignalEvent) {
        if self.failure.is_some() {
            return;
        }
        if let Err(e) = self.dispatch(event) {
            self.failure = Some(e);
        }
    }
}

/// The stand-in twin: ingests envelopes idempotently and folds them into
/// a state label, a property mirror, and an ordered event log.
#[derive(Debug, Clone, Default)]
pub struct TwinStub {
    /// Current device state label; error signals degrade it.
    pub state_label: String,
    /// Mirrored properties: payload deltas plus signal-specific effects.
    pub properties: BTreeMap<String, Value>,
    /// Accepted envelopes in arrival order, duplicates removed.
    pub log: Vec<SignalEnvelope>,
    seen: BTreeSet<(String, u64)>,
}

impl TwinStub {
    pub fn new() -> TwinStub {
        TwinStub { state_label: "operational".to_string(), ..TwinStub::default() }
    }

    /// Validates and ingests one envelope. Duplicates (same `(runId,
    /// seq)`) are acked again but change nothing. `Err` is a protocol
    /// rejection, never a transient failure.
    pub fn ingest(&mut self, envelope: SignalEnvelope) -> Result<Ack, String> {
        if envelope.v != WIRE_VERSION {
            return Err(format!("unsupported wire version {}", envelope.v));
        }
        if let Some(library) = SignalKind::from_library_name(&envelope.signal) {
            if library.category().name() != envelope.category {
                return Err(format!(
                    "signal '{}' is {}, not {}",
                    envelope.signal,
                    library.category(),
                    envelope.category
                ));
            }
        } else if SignalCategory::from_name(&envelope.category).is_none() {
            return Err(format!("unknown category '{}'", envelope.category));
        }
        let ack = Ack { run_id: envelope.run_id.clone(), seq: envelope.seq };
        if !self.seen.insert((envelope.run_id.clone(), envelope.seq)) {
            return Ok(ack);
        }
        self.apply(&envelope);
        self.log.push(envelope);
        Ok(ack)
    }

    /// The reaction table — a pure fold over envelopes. Non-normative: a
    /// real twin supplies its own reactions; this one only makes effects
    /// observable.
    pub fn apply(&mut self, envelope: &SignalEnvelope) {
        for (key, value) in &envelope.payload {
            self.properties.insert(key.clone(), value.clone());
        }
        match envelope.signal.as_str() {
            "FullBattery" => {
                self.properties.insert("battery".into(), Value::Int(100));
            }
            "LowBattery" => {
                self.properties.insert("battery".into(), Value::Int(15));
            }
            "CartridgeInserted" => {
                self.properties.insert("cartridge".into(), Value::Str("inserted".into()));
            }
            "CartridgeEmpty" => {
                self.properties.insert("cartridge".into(), Value::Str("empty".into()));
            }
            "ConnectionChanged" => {
                self.properties.insert("connection".into(), Value::Str("changed".into()));
            }
            "WeakConnection" => {
                self.properties.insert("connection".into(), Value::Str("weak".into()));
            }
            "NoConnection" => self.state_label = "disconnected".into(),
            "NoPower" => self.state_label = "unpowered".into(),
            "DeadBattery" => self.state_label = "powered-off".into(),
            "VerifyFail" => self.state_label = "verification-failed".into(),
            "DeliveryFail" => self.state_label = "delivery-failed".into(),
            "DeviceError" => self.state_label = "device-error".into(),
            "SensorError" => self.state_label = "sensor-error".into(),
            // Anything else is a user interaction: record its label
            // verbatim; an error-category one still degrades the twin.
            other => {
                self.properties.insert("lastInteraction".into(), Value::Str(other.to_string()));
                if envelope.category == "error" {
                    self.state_label = "degraded".into();
                }
            }
        }
    }
}

/// Delivers straight into an owned [`TwinStub`], no wire involved.
#[derive(Debug, Default)]
pub struct InProcEndpoint {
    pub stub: TwinStub,
}

impl InProcEndpoint {
    pub fn new() -> InProcEndpoint {
        InProcEndpoint { stub: TwinStub::new() }
    }
}

impl TwinEndpoint for InProcEndpoint {
    fn deliver(&mut self, line: &str) -> std::io::Result<String> {
        let envelope: SignalEnvelope = serde_json::from_str(line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let reply = match self.stub.ingest(envelope) {
            Ok(ack) => serde_json::to_string(&ack).expect("acks serialise"),
            Err(message) => format!("{{\"error\":{}}}", serde_json::Value::String(message)),
        };
        Ok(reply)
    }
}

/// Line-oriented client for a remote stub. Reconnects lazily: a failed
/// exchange drops the connection so the dispatcher's next attempt dials
/// again, which is what carries deliveries across an endpoint restart.
#[derive(Debug)]
pub struct TcpEndpoint {
    addr: String,
    conn: Option<BufReader<TcpStream>>,
}

impl TcpEndpoint {
    pub fn new(addr: &str) -> TcpEndpoint {
        TcpEndpoint { addr: addr.to_string(), conn: None }
    }

    /// Drops the current connection; the next delivery dials afresh.
    pub fn reset(&mut self) {
        self.conn = None;
    }

    fn exchange(&mut self, line: &str) -> std::io::Result<String> {
        if self.conn.is_none() {
            let stream = TcpStream::connect(&self.addr)?;
            self.conn = Some(BufReader::new(stream));
        }
        let reader = self.conn.as_mut().expect("just connected");
        let stream = reader.get_mut();
        stream.write_all(line.as_bytes())?;
        stream.write_all(b"\n")?;
        stream.flush()?;
        let mut reply = String::new();
        if reader.read_line(&mut reply)? == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "twin closed the connection",
            ));
        }
        Ok(reply.trim_end().to_string())
    }
}

impl TwinEndpoint for TcpEndpoint {
    fn deliver(&mut self, line: &str) -> std::io::Result<String> {
        let result = self.exchange(line);
        if result.is_err() {
            self.conn = None;
        }
        result
    }
}

/// Serves a [`TwinStub`] over a listener, one connection at a time, the
/// stub's state carrying across connections. With a connection limit the
/// stub is returned afterwards (used by tests); with `None` it serves
/// until the listener fails.
pub fn serve_connections(
    listener: TcpListener,
    limit: Option<usize>,
) -> std::io::Result<TwinStub> {
    let mut stub = TwinStub::new();
    let mut served = 0usize;
    for conn in listener.incoming() {
        serve_one(conn?, &mut stub)?;
        served += 1;
        if limit.is_some_and(|n| served >= n) {
            break;
        }
    }
    Ok(stub)
}

fn serve_one(stream: TcpStream, stub: &mut TwinStub) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(()); // client went away; stub state persists
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<SignalEnvelope>(text) {
            Ok(envelope) => match stub.ingest(envelope) {
                Ok(ack) => serde_json::to_string(&ack).expect("acks serialise"),
                Err(message) => format!("{{\"error\":{}}}", serde_json::Value::String(message)),
            },
            Err(e) => format!("{{\"error\":{}}}", serde_json::Value::String(e.to_string())),
        };
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;
    use crate::engine::{run, RecordKind, SimulationConfig};
    use crate::instance::instantiate;
    use crate::stoch::{DistributionSpec, RandomStream};

    fn event(seq: u64, signal: SignalKind) -> SignalEvent {
        SignalEvent {
            seq,
            t: seq * 10,
            machine: "DevSM#0".into(),
            signal,
            instance: "Dev#0".into(),
            payload: BTreeMap::new(),
        }
    }

    #[test]
    fn envelope_serialises_with_a_leading_version_field() {
        let mut ev = event(3, SignalKind::LowBattery);
        ev.payload.insert("Dev#0.x".into(), Value::Int(5));
        let envelope = SignalEnvelope::from_event("karie-uniform-r01", &ev);
        let line = serde_json::to_string(&envelope).unwrap();
        assert!(line.starts_with("{\"v\":1,\"runId\":\"karie-uniform-r01\",\"seq\":3,"), "{line}");
        let back: SignalEnvelope = serde_json::from_str(&line).unwrap();
        assert_eq!(back, envelope);
        assert_eq!(back.category, "warning");
    }

    #[test]
    fn stub_reactions_follow_the_table() {
        let mut stub = TwinStub::new();
        assert_eq!(stub.state_label, "operational");

        let full = SignalEnvelope::from_event("r", &event(0, SignalKind::FullBattery));
        stub.ingest(full).unwrap();
        assert_eq!(stub.properties.get("battery"), Some(&Value::Int(100)));
        assert_eq!(stub.state_label, "operational");

        let lost = SignalEnvelope::from_event("r", &event(1, SignalKind::NoConnection));
        stub.ingest(lost).unwrap();
        assert_eq!(stub.state_label, "disconnected");

        let custom = SignalEnvelope::from_event(
            "r",
            &event(
                2,
                SignalKind::UserInteraction {
                    label: "DoorOpened".into(),
                    category: SignalCategory::Info,
                },
            ),
        );
        stub.ingest(custom).unwrap();
        assert_eq!(
            stub.properties.get("lastInteraction"),
            Some(&Value::Str("DoorOpened".into()))
        );

        // Payload deltas land in the mirror too.
        let mut ev = event(3, SignalKind::CartridgeInserted);
        ev.payload.insert("Dev#0.dose".into(), Value::Real(2.5));
        stub.ingest(SignalEnvelope::from_event("r", &ev)).unwrap();
        assert_eq!(stub.properties.get("Dev#0.dose"), Some(&Value::Real(2.5)));

        assert_eq!(stub.log.len(), 4);
        let seqs: Vec<u64> = stub.log.iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2, 3]);
    }

    #[test]
    fn stub_rejects_protocol_violations_and_dedups() {
        let mut stub = TwinStub::new();
        let mut wrong_version = SignalEnvelope::from_event("r", &event(0, SignalKind::LowBattery));
        wrong_version.v = 2;
        assert!(stub.ingest(wrong_version).is_err());

        let mut wrong_category = SignalEnvelope::from_event("r", &event(0, SignalKind::LowBattery));
        wrong_category.category = "info".into();
        assert!(stub.ingest(wrong_category).is_err());

        let fine = SignalEnvelope::from_event("r", &event(0, SignalKind::LowBattery));
        stub.ingest(fine.clone()).unwrap();
        let again = stub.ingest(fine).unwrap();
        assert_eq!(again.seq, 0, "duplicate is re-acked");
        assert_eq!(stub.log.len(), 1, "but ingested once");
    }

    /// Fails the first `failures` delivery attempts outright, and for the
    /// next `ack_drops` attempts delivers to the inner endpoint but loses
    /// the reply — the at-least-once hazard that forces receiver dedup.
    struct FlakyEndpoint<E> {
        inner: E,
        failures: u32,
        ack_drops: u32,
    }

    impl<E: TwinEndpoint> TwinEndpoint for FlakyEndpoint<E> {
        fn deliver(&mut self, line: &str) -> std::io::Result<String> {
            if self.failures > 0 {
                self.failures -= 1;
                return Err(std::io::Error::new(std::io::ErrorKind::ConnectionRefused, "down"));
            }
            let reply = self.inner.deliver(line)?;
            if self.ack_drops > 0 {
                self.ack_drops -= 1;
                return Err(std::io::Error::new(std::io::ErrorKind::TimedOut, "ack lost"));
            }
            Ok(reply)
        }
    }

    fn quick_policy() -> RetryPolicy {
        RetryPolicy { base: Duration::from_millis(1), cap: Duration::from_millis(4), max_attempts: 6 }
    }

    #[test]
    fn retries_ride_out_an_endpoint_outage_without_loss_or_reorder() {
        let flaky = FlakyEndpoint { inner: InProcEndpoint::new(), failures: 3, ack_drops: 2 };
        let mut dispatcher = Dispatcher::new("r", flaky).with_policy(quick_policy());
        for seq in 0..10 {
            dispatcher.dispatch(&event(seq, SignalKind::LowBattery)).unwrap();
        }
        assert!(dispatcher.failure.is_none());
        let acked: Vec<u64> = dispatcher.acked.iter().map(|a| a.seq).collect();
        assert_eq!(acked, (0..10).collect::<Vec<_>>());

        // The two dropped acks caused redelivery; dedup kept the log exact.
        let stub = dispatcher.into_endpoint().inner.stub;
        let logged: Vec<u64> = stub.log.iter().map(|e| e.seq).collect();
        assert_eq!(logged, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn a_dead_endpoint_surfaces_after_the_retry_budget() {
        let dead = FlakyEndpoint { inner: InProcEndpoint::new(), failures: u32::MAX, ack_drops: 0 };
        let mut dispatcher = Dispatcher::new("r", dead).with_policy(quick_policy());
        let err = dispatcher.dispatch(&event(0, SignalKind::LowBattery)).unwrap_err();
        match err {
            DispatchError::EndpointUnavailable { attempts, .. } => assert_eq!(attempts, 6),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn tcp_round_trip_survives_a_reconnect() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let server = std::thread::spawn(move || serve_connections(listener, Some(2)).unwrap());

        let mut dispatcher =
            Dispatcher::new("r", TcpEndpoint::new(&addr)).with_policy(quick_policy());
        for seq in 0..3 {
            dispatcher.dispatch(&event(seq, SignalKind::LowBattery)).unwrap();
        }
        // Drop the connection mid-run; the next delivery dials again and
        // reaches the same stub.
        dispatcher.endpoint_mut().reset();
        for seq in 3..5 {
            dispatcher.dispatch(&event(seq, SignalKind::FullBattery)).unwrap();
        }
        drop(dispatcher);

        let stub = server.join().unwrap();
        let seqs: Vec<u64> = stub.log.iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2, 3, 4]);
        assert_eq!(stub.properties.get("battery"), Some(&Value::Int(100)));
    }

    const CONSERVED: &str = r#"
model Conserved
component Dev <<Feature>> {
  property x: int in [0, 100];
  reception LowBattery;
  reception DeadBattery;
  behavior DevSM;
}
machine DevSM for Dev {
  initial -> A;
  state A {
    entry {
      set x = 40;
      emit FullBattery;
    }
  }
  state B {
    do {
      emit WeakConnection;
    }
  }
  final Z;
  transition ab: A -> B on LowBattery belief 0.9;
  transition bz: B -> Z on DeadBattery;
}
"#;

    #[test]
    fn trace_acks_and_stub_log_agree_for_a_whole_run() {
        let model = parse_model(CONSERVED).unwrap();
        let base = RandomStream::from_seed(14);
        let mut im = instantiate(
            &model,
            &BTreeMap::new(),
            &mut base.split("instantiate"),
            100,
        )
        .unwrap();
        let config = SimulationConfig::new(14, DistributionSpec::Uniform { lo: 0.0, hi: 1.0 });
        let mut dispatcher = Dispatcher::new("conserved-r00", InProcEndpoint::new());
        let report = run(&model, &mut im, &config, &mut dispatcher).unwrap();
        assert!(dispatcher.failure.is_none());

        let mut from_trace: Vec<String> = report
            .trace
            .iter()
            .filter(|r| matches!(r.kind, RecordKind::Event | RecordKind::Emit))
            .map(|r| r.detail["signal"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(dispatcher.acked.len(), from_trace.len());
        assert_eq!(report.events as usize, from_trace.len());

        let stub = dispatcher.into_endpoint().stub;
        let mut from_stub: Vec<String> = stub.log.iter().map(|e| e.signal.clone()).collect();
        assert_eq!(from_stub, from_trace, "stub log order equals trace order");
        from_trace.sort();
        from_stub.sort();
        assert_eq!(from_stub, from_trace);

        // The run's dead-battery trigger degraded the twin, and the first
        // dispatch carried the committed write.
        assert_eq!(stub.state_label, "powered-off");
        assert_eq!(stub.log[0].payload.get("Dev#0.x"), Some(&Value::Int(40)));
        assert_eq!(stub.properties.get("Dev#0.x"), Some(&Value::Int(40)));
    }
}
