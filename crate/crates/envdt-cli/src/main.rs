//! `envdt` — command-line front end for the environment-model simulator.
//!
//! Subcommands cover the pipeline end to end: `validate` and `census`
//! inspect a model file, `instantiate` draws a constraint-satisfying
//! object graph, `simulate` executes one run against a twin endpoint,
//! `experiment` executes a device × distribution × repetition matrix
//! from a TOML plan, `report` rebuilds the aggregate CSVs from traces
//! already on disk, and `twin-stub` serves the reference twin over TCP.
//!
//! Exit codes: 0 on success, 1 for model or plan problems (parse,
//! validation, constraint, distribution errors), 2 for I/O failures.
//! `ENVDT_SEED` supplies the base seed wherever `--seed` is omitted.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use envdt::analytics::{
    aggregate, coverage, diversity, pivot_csv, AnalyticsError, RunSample,
    REPORT_DISTRIBUTION_ORDER,
};
use envdt::bridge::{serve_connections, Dispatcher, InProcEndpoint, TcpEndpoint};
use envdt::dsl::parse_model;
use envdt::engine::{run, ExecutionTrace, RunReport, SimulationConfig, DEFAULT_MAX_STEPS};
use envdt::experiment::{load_plan, run_experiment, PlanError, RunSidecar};
use envdt::instance::{instantiate, ConstraintKind, CountBound, DEFAULT_MAX_ATTEMPTS};
use envdt::model::{element_census, validate_model, EnvironmentModel};
use envdt::stoch::{DistributionSpec, RandomStream};

#[derive(Parser)]
#[command(
    name = "envdt",
    version,
    about = "Stochastic simulation of medical-device environment models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a model file and report validation diagnostics.
    Validate {
        /// Model file (.envdt).
        file: PathBuf,
    },
    /// Count model elements: classes, machines, states, transitions, events.
    Census {
        /// Model file (.envdt).
        file: PathBuf,
    },
    /// Draw a constraint-satisfying instance of a model's class diagram.
    Instantiate {
        /// Model file (.envdt).
        file: PathBuf,
        /// Seed for the instantiation draw (default: ENVDT_SEED, then 0).
        #[arg(long)]
        seed: Option<u64>,
        /// Bind a cardinality parameter the model references via param(NAME).
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
        /// Rejection-sampling budget before giving up.
        #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
        max_attempts: u32,
        /// Write the instance JSONL here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute one simulation run and print a one-line summary.
    Simulate {
        /// Model file (.envdt).
        file: PathBuf,
        /// Run seed (default: ENVDT_SEED, then 0).
        #[arg(long)]
        seed: Option<u64>,
        /// Distribution for uncertain transitions, e.g. "exponential(0.25)".
        #[arg(long, default_value = "uniform(0, 1)")]
        dist: String,
        /// Exercise every element at most once.
        #[arg(long, value_name = "BOOL", default_value_t = true, action = clap::ArgAction::Set)]
        once_only: bool,
        /// Stop after this many transitions.
        #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
        max_steps: u64,
        /// Twin endpoint: "inproc" or "tcp://HOST:PORT".
        #[arg(long, default_value = "inproc")]
        twin: String,
        /// Write the execution trace (JSONL) here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Bind a cardinality parameter the model references via param(NAME).
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
    },
    /// Execute a device x distribution x repetition matrix from a TOML plan.
    Experiment {
        /// Plan file (TOML).
        plan: PathBuf,
        /// Base seed when the plan has none (default: ENVDT_SEED, then 0).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild aggregate CSVs from traces already on disk.
    Report {
        /// Directory holding {run-id}.jsonl traces and .meta.json sidecars.
        #[arg(long = "in", value_name = "DIR")]
        in_dir: PathBuf,
        /// Directory the CSVs are written into.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Model file for each device in the traces, repeatable.
        #[arg(long = "fixture", value_name = "FILE", required = true)]
        fixtures: Vec<PathBuf>,
    },
    /// Serve the reference twin stub over TCP.
    TwinStub {
        /// Address to listen on, e.g. 127.0.0.1:4800.
        #[arg(long, value_name = "ADDR")]
        listen: String,
        /// Stop after serving this many connections (default: serve forever).
        #[arg(long)]
        limit: Option<usize>,
    },
}

/// A command failure carrying its exit class.
#[derive(Debug)]
enum Failure {
    /// Bad model, plan, or argument content — exit 1.
    Semantic(String),
    /// The outside world failed (filesystem, network) — exit 2.
    Io(String),
}

impl Failure {
    fn semantic(err: impl std::fmt::Display) -> Failure {
        Failure::Semantic(err.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Failure {
        Failure::Io(err.to_string())
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Semantic(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(Failure::Io(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { file } => cmd_validate(&file),
        Command::Census { file } => cmd_census(&file),
        Command::Instantiate { file, seed, params, max_attempts, out } => {
            cmd_instantiate(&file, seed, &params, max_attempts, out.as_deref())
        }
        Command::Simulate { file, seed, dist, once_only, max_steps, twin, trace, params } => {
            cmd_simulate(&file, seed, &dist, once_only, max_steps, &twin, trace.as_deref(), &params)
        }
        Command::Experiment { plan, seed } => cmd_experiment(&plan, seed),
        Command::Report { in_dir, out, fixtures } => cmd_report(&in_dir, &out, &fixtures),
        Command::TwinStub { listen, limit } => cmd_twin_stub(&listen, limit),
    }
}

/// `--seed` beats `ENVDT_SEED` beats 0.
fn base_seed(explicit: Option<u64>) -> Result<u64, Failure> {
    if let Some(seed) = explicit {
        return Ok(seed);
    }
    match std::env::var("ENVDT_SEED") {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| Failure::Semantic(format!("ENVDT_SEED is not a valid seed: {text:?}"))),
        Err(_) => Ok(0),
    }
}

fn parse_params(pairs: &[String]) -> Result<BTreeMap<String, i64>, Failure> {
    let mut params = BTreeMap::new();
    for pair in pairs {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| Failure::Semantic(format!("--param needs NAME=VALUE, got {pair:?}")))?;
        let value: i64 = value
            .trim()
            .parse()
            .map_err(|_| Failure::Semantic(format!("--param {name}: {value:?} is not an integer")))?;
        params.insert(name.trim().to_string(), value);
    }
    Ok(params)
}

fn load_model(path: &Path) -> Result<EnvironmentModel, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|err| Failure::Io(format!("{}: {err}", path.display())))?;
    let model = parse_model(&text)
        .map_err(|err| Failure::Semantic(format!("{}: {err}", path.display())))?;
    let report = validate_model(&model);
    for warning in report.warnings() {
        eprintln!("warning: {}: {warning}", path.display());
    }
    if !report.is_ok() {
        for error in report.errors() {
            eprintln!("error: {}: {error}", path.display());
        }
        return Err(Failure::Semantic(format!(
            "{}: {} validation error(s)",
            path.display(),
            report.errors().count()
        )));
    }
    Ok(model)
}

fn device_label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_validate(file: &Path) -> Result<(), Failure> {
    let model = load_model(file)?;
    let census = element_census(&model);
    println!(
        "ok: model {} — {} classes, {} machines",
        model.name, census.classes, census.machines
    );
    Ok(())
}

fn cmd_census(file: &Path) -> Result<(), Failure> {
    let model = load_model(file)?;
    let census = element_census(&model);
    println!("model                {}", model.name);
    println!("classes              {}", census.classes);
    println!("properties           {}", census.properties);
    println!("class-stereotypes    {}", census.class_stereotypes);
    println!("receptions           {}", census.receptions);
    println!("constraints          {}", census.constraints);
    println!("machines             {}", census.machines);
    println!("machine-stereotypes  {}", census.machine_stereotypes);
    println!("states               {}", census.states);
    println!("transitions          {}", census.transitions);
    println!("events               {}", census.all_events);
    println!("uncertain-events     {}", census.uncertain_events);
    println!("opaque-behaviors     {}", census.opaque_behaviors);
    println!("coverable-elements   {}", census.coverable_total());
    Ok(())
}

/// Warns about `--param` names the model never mentions. Parameters only
/// take effect through `param(NAME)` bounds in cardinality constraints, so
/// a name outside that set is almost certainly a mistake (for example a
/// role name passed where a parameter name was meant).
fn warn_unreferenced_params(model: &EnvironmentModel, params: &BTreeMap<String, i64>) {
    let referenced: BTreeSet<&str> = model
        .constraints
        .iter()
        .filter_map(|c| match &c.kind {
            ConstraintKind::Cardinality { lower, upper, .. } => Some([lower, upper]),
            _ => None,
        })
        .flatten()
        .filter_map(|bound| match bound {
            CountBound::Param(name) => Some(name.as_str()),
            CountBound::Lit(_) => None,
        })
        .collect();
    for name in params.keys().filter(|n| !referenced.contains(n.as_str())) {
        eprintln!("warning: parameter {name:?} is not referenced by any model constraint");
    }
}

fn cmd_instantiate(
    file: &Path,
    seed: Option<u64>,
    params: &[String],
    max_attempts: u32,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let model = load_model(file)?;
    let params = parse_params(params)?;
    warn_unreferenced_params(&model, &params);
    let seed = base_seed(seed)?;
    let mut stream = RandomStream::from_seed(seed).split("instantiate");
    let instance = instantiate(&model, &params, &mut stream, max_attempts).map_err(Failure::semantic)?;
    let jsonl = instance.to_jsonl();
    match out {
        Some(path) => {
            std::fs::write(path, &jsonl)
                .map_err(|err| Failure::Io(format!("{}: {err}", path.display())))?;
            println!(
                "instance: {} components (seed {seed}) -> {}",
                instance.instances.len(),
                path.display()
            );
        }
        None => {
            print!("{jsonl}");
            eprintln!("instance: {} components (seed {seed})", instance.instances.len());
        }
    }
    Ok(())
}

/// How `simulate` talks to the twin: both arms are dispatchers, kept
/// separate so the TCP failure can surface as an I/O exit.
enum TwinSink {
    InProc(Dispatcher<InProcEndpoint>),
    Tcp(Dispatcher<TcpEndpoint>),
}

impl TwinSink {
    fn parse(twin: &str, run_id: &str) -> Result<TwinSink, Failure> {
        if twin == "inproc" {
            return Ok(TwinSink::InProc(Dispatcher::new(run_id, InProcEndpoint::new())));
        }
        if let Some(addr) = twin.strip_prefix("tcp://") {
            return Ok(TwinSink::Tcp(Dispatcher::new(run_id, TcpEndpoint::new(addr))));
        }
        Err(Failure::Semantic(format!(
            "--twin must be \"inproc\" or \"tcp://HOST:PORT\", got {twin:?}"
        )))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    file: &Path,
    seed: Option<u64>,
    dist: &str,
    once_only: bool,
    max_steps: u64,
    twin: &str,
    trace_out: Option<&Path>,
    params: &[String],
) -> Result<(), Failure> {
    let model = load_model(file)?;
    let params = parse_params(params)?;
    warn_unreferenced_params(&model, &params);
    let seed = base_seed(seed)?;
    let dist = DistributionSpec::parse(dist).map_err(Failure::semantic)?;
    let run_id = format!("{}-{}-s{seed}", device_label(file), dist.kind_name());

    let base = RandomStream::from_seed(seed);
    let mut instance =
        instantiate(&model, &params, &mut base.split("instantiate"), DEFAULT_MAX_ATTEMPTS)
            .map_err(Failure::semantic)?;

    let mut config = SimulationConfig::new(seed, dist);
    config.once_only = once_only;
    config.max_steps = max_steps;

    let mut sink = TwinSink::parse(twin, &run_id)?;
    let report = match &mut sink {
        TwinSink::InProc(dispatcher) => run(&model, &mut instance, &config, dispatcher),
        TwinSink::Tcp(dispatcher) => run(&model, &mut instance, &config, dispatcher),
    }
    .map_err(Failure::semantic)?;

    let (acked, failure) = match &sink {
        TwinSink::InProc(d) => (d.acked.len(), d.failure.as_ref().map(|e| e.to_string())),
        TwinSink::Tcp(d) => (d.acked.len(), d.failure.as_ref().map(|e| e.to_string())),
    };

    if let Some(path) = trace_out {
        std::fs::write(path, report.trace.to_jsonl())
            .map_err(|err| Failure::Io(format!("{}: {err}", path.display())))?;
    }

    print_run_summary(&run_id, &model, &report, acked)?;

    if let Some(err) = failure {
        return Err(Failure::Io(format!("twin delivery failed: {err}")));
    }
    Ok(())
}

fn print_run_summary(
    run_id: &str,
    model: &EnvironmentModel,
    report: &RunReport,
    acked: usize,
) -> Result<(), Failure> {
    let cov = coverage(run_id, &report.trace, model).map_err(Failure::semantic)?;
    let div = diversity(run_id, &report.trace);
    println!(
        "{run_id}: reason={} steps={} events={} acked={acked} coverage={:.2}% simpson={:.4} core-runtime-ms={:.2}",
        report.reason.name(),
        report.steps,
        report.events,
        cov.percent,
        div.simpson,
        report.core_runtime.as_secs_f64() * 1000.0,
    );
    Ok(())
}

fn cmd_experiment(plan_path: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let default_seed = base_seed(seed)?;
    let plan = load_plan(plan_path, default_seed).map_err(|err| match err {
        PlanError::Io(io) => Failure::Io(format!("{}: {io}", plan_path.display())),
        other => Failure::Semantic(format!("{}: {other}", plan_path.display())),
    })?;
    println!(
        "matrix: {} fixture(s) x {} distribution(s) x {} rep(s) = {} runs (seed {})",
        plan.fixtures.len(),
        plan.distributions.len(),
        plan.repetitions,
        plan.fixtures.len() * plan.distributions.len() * plan.repetitions as usize,
        plan.base_seed,
    );
    let output = run_experiment(&plan).map_err(|err| match err {
        envdt::experiment::ExperimentError::Io(io) => Failure::Io(io.to_string()),
        other => Failure::Semantic(other.to_string()),
    })?;
    println!("executed {} run(s), resumed {} from disk", output.executed, output.skipped);
    for path in &output.csv_paths {
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// One trace pulled back off disk: its identity, metrics inputs, and sidecar.
struct StoredRun {
    device: String,
    dist_kind: String,
    rep: u32,
    trace: ExecutionTrace,
    sidecar: RunSidecar,
}

fn cmd_report(in_dir: &Path, out_dir: &Path, fixtures: &[PathBuf]) -> Result<(), Failure> {
    let mut models: BTreeMap<String, EnvironmentModel> = BTreeMap::new();
    let mut device_order: Vec<String> = Vec::new();
    for fixture in fixtures {
        let label = device_label(fixture);
        models.insert(label.clone(), load_model(fixture)?);
        device_order.push(label);
    }

    let mut runs = collect_stored_runs(in_dir, &models)?;
    if runs.is_empty() {
        return Err(Failure::Semantic(format!(
            "{}: no complete traces for the given fixtures",
            in_dir.display()
        )));
    }
    let device_index =
        |d: &str| device_order.iter().position(|x| x == d).unwrap_or(usize::MAX);
    runs.sort_by(|a, b| {
        device_index(&a.device)
            .cmp(&device_index(&b.device))
            .then_with(|| a.dist_kind.cmp(&b.dist_kind))
            .then_with(|| a.rep.cmp(&b.rep))
    });

    let seen_kinds: BTreeSet<&str> = runs.iter().map(|r| r.dist_kind.as_str()).collect();
    let mut dist_rows: Vec<&str> = REPORT_DISTRIBUTION_ORDER
        .iter()
        .copied()
        .filter(|k| seen_kinds.contains(k))
        .collect();
    for kind in &seen_kinds {
        if !dist_rows.contains(kind) {
            dist_rows.push(kind);
        }
    }
    let devices: Vec<&str> = device_order.iter().map(String::as_str).collect();

    let mut samples = vec![Vec::new(), Vec::new(), Vec::new()];
    for run in &runs {
        let id = envdt::experiment::run_id(&run.device, &run.dist_kind, run.rep);
        let model = &models[&run.device];
        let cov = coverage(&id, &run.trace, model).map_err(|err: AnalyticsError| {
            Failure::Semantic(format!("{id}: {err}"))
        })?;
        let div = diversity(&id, &run.trace);
        for (slot, value) in [
            (0usize, cov.percent),
            (1, div.simpson),
            (2, run.sidecar.core_runtime_ms),
        ] {
            samples[slot].push(RunSample {
                device: run.device.clone(),
                distribution: run.dist_kind.clone(),
                value,
            });
        }
    }

    std::fs::create_dir_all(out_dir)?;
    for (file, metric, slot) in [
        ("coverage.csv", "coverage-percent", 0usize),
        ("diversity.csv", "simpson-diversity", 1),
        ("simtime.csv", "core-runtime-ms", 2),
    ] {
        let table = aggregate(metric, &samples[slot]);
        let path = out_dir.join(file);
        std::fs::write(&path, pivot_csv(&table, &devices, &dist_rows))
            .map_err(|err| Failure::Io(format!("{}: {err}", path.display())))?;
        println!("wrote {}", path.display());
    }
    println!("reported {} run(s)", runs.len());
    Ok(())
}

/// Loads every complete `{device}-{dist}-rNN.jsonl` + `.meta.json` pair
/// for a known device. Unknown devices are an error (likely a missing
/// `--fixture`); stray files are skipped.
fn collect_stored_runs(
    in_dir: &Path,
    models: &BTreeMap<String, EnvironmentModel>,
) -> Result<Vec<StoredRun>, Failure> {
    let mut runs = Vec::new();
    let entries = std::fs::read_dir(in_dir)
        .map_err(|err| Failure::Io(format!("{}: {err}", in_dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
            continue;
        }
        let stem = device_label(&path);
        let Some((device, dist_kind, rep)) = parse_run_id(&stem) else {
            eprintln!("warning: skipping {} (not a run trace)", path.display());
            continue;
        };
        if !models.contains_key(device) {
            let known: Vec<&str> = models.keys().map(String::as_str).collect();
            return Err(Failure::Semantic(format!(
                "{}: device {device:?} has no --fixture (known: {})",
                path.display(),
                known.join(", ")
            )));
        }
        let sidecar_path = path.with_extension("meta.json");
        let sidecar_text = std::fs::read_to_string(&sidecar_path)
            .map_err(|err| Failure::Io(format!("{}: {err}", sidecar_path.display())))?;
        let sidecar: RunSidecar = serde_json::from_str(&sidecar_text)
            .map_err(|err| Failure::Semantic(format!("{}: {err}", sidecar_path.display())))?;
        let text = std::fs::read_to_string(&path)
            .map_err(|err| Failure::Io(format!("{}: {err}", path.display())))?;
        let trace = ExecutionTrace::from_jsonl(&text)
            .map_err(|err| Failure::Semantic(format!("{}: {err}", path.display())))?;
        if !trace.is_complete() {
            eprintln!("warning: skipping {} (incomplete trace)", path.display());
            continue;
        }
        runs.push(StoredRun {
            device: device.to_string(),
            dist_kind: dist_kind.to_string(),
            rep,
            trace,
            sidecar,
        });
    }
    Ok(runs)
}

/// Splits `{device}-{dist}-rNN` from the right, so device labels may
/// themselves contain dashes.
fn parse_run_id(stem: &str) -> Option<(&str, &str, u32)> {
    let mut parts = stem.rsplitn(3, '-');
    let rep = parts.next()?.strip_prefix('r')?.parse().ok()?;
    let dist_kind = parts.next()?;
    let device = parts.next()?;
    if device.is_empty() || dist_kind.is_empty() {
        return None;
    }
    Some((device, dist_kind, rep))
}

fn cmd_twin_stub(listen: &str, limit: Option<usize>) -> Result<(), Failure> {
    let listener = TcpListener::bind(listen)
        .map_err(|err| Failure::Io(format!("cannot listen on {listen}: {err}")))?;
    let local = listener.local_addr().map(|a| a.to_string()).unwrap_or_else(|_| listen.to_string());
    println!("twin-stub listening on {local}");
    std::io::stdout().flush().ok();
    let stub = serve_connections(listener, limit)?;
    println!(
        "twin-stub done: {} envelope(s) applied, final state {:?}",
        stub.log.len(),
        stub.state_label
    );
    Ok(())
}
