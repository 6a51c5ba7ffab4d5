//! The experiment matrix: devices × distributions × repetitions.
//!
//! A plan is a small TOML file naming model fixtures, distributions,
//! a repetition count, and a base seed. Every run in the matrix gets a
//! deterministic identity `{device}-{distribution}-r{NN}` and a seed
//! hashed from (base seed, device, distribution, repetition), so the
//! whole matrix is reproducible run by run and trace byte for trace
//! byte. Runs are independent and execute on parallel workers; each
//! one is internally deterministic.
//!
//! Outputs under the plan's `out` directory: one trace per run in
//! `traces/`, a sidecar `.meta.json` carrying the measurements that
//! must stay out of the trace bytes (host runtime), and three pivoted
//! CSVs — `coverage.csv`, `diversity.csv`, `simtime.csv`. A rerun
//! skips any run whose complete trace and sidecar already exist, which
//! makes an interrupted matrix resumable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    aggregate, coverage, diversity, pivot_csv, AnalyticsError, CoverageReport, DiversityReport,
    RunSample, REPORT_DISTRIBUTION_ORDER,
};
use crate::dsl::{parse_model, ParseError};
use crate::engine::{
    run, ExecutionTrace, NullSink, RunError, SimulationConfig, TraceError, DEFAULT_MAX_STEPS,
};
use crate::instance::{instantiate, InstantiateError, DEFAULT_MAX_ATTEMPTS};
use crate::model::{validate_model, EnvironmentModel};
use crate::stoch::{run_seed, DistError, DistributionSpec, RandomStream};

pub const DEFAULT_REPETITIONS: u32 = 30;

/// A parsed, resolved experiment plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    /// Model files; the file stem is the device label in run ids and
    /// report columns.
    pub fixtures: Vec<PathBuf>,
    pub distributions: Vec<DistributionSpec>,
    pub repetitions: u32,
    pub base_seed: u64,
    pub once_only: bool,
    pub max_steps: u64,
    /// Cardinality parameters passed to the instantiator.
    pub params: BTreeMap<String, i64>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    fixtures: Vec<String>,
    distributions: Vec<String>,
    repetitions: Option<u32>,
    seed: Option<u64>,
    once_only: Option<bool>,
    max_steps: Option<u64>,
    #[serde(default)]
    params: BTreeMap<String, i64>,
    out: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("cannot read plan: {0}")]
    Io(#[from] std::io::Error),
    #[error("plan does not parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("plan lists no {0}")]
    Empty(&'static str),
    #[error("plan repetitions must be at least 1")]
    NoRepetitions,
    #[error("plan distribution: {0}")]
    BadDistribution(#[from] DistError),
}

/// Reads a plan file. Relative fixture and output paths are resolved
/// against the plan file's directory; a missing `seed` falls back to
/// `default_seed` (the CLI feeds `ENVDT_SEED` through here).
pub fn load_plan(path: &Path, default_seed: u64) -> Result<ExperimentPlan, PlanError> {
    let raw: RawPlan = toml::from_str(&std::fs::read_to_string(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    if raw.fixtures.is_empty() {
        return Err(PlanError::Empty("fixtures"));
    }
    if raw.distributions.is_empty() {
        return Err(PlanError::Empty("distributions"));
    }
    let repetitions = raw.repetitions.unwrap_or(DEFAULT_REPETITIONS);
    if repetitions == 0 {
        return Err(PlanError::NoRepetitions);
    }
    let distributions = raw
        .distributions
        .iter()
        .map(|s| DistributionSpec::parse(s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentPlan {
        fixtures: raw.fixtures.iter().map(|f| dir.join(f)).collect(),
        distributions,
        repetitions,
        base_seed: raw.seed.unwrap_or(default_seed),
        once_only: raw.once_only.unwrap_or(true),
        max_steps: raw.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
        params: raw.params,
        out_dir: dir.join(raw.out.as_deref().unwrap_or("out")),
    })
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("fixture {path}: {err}")]
    Parse { path: PathBuf, err: ParseError },
    #[error("fixture {path} has {count} validation error(s); first: {first}")]
    Invalid { path: PathBuf, count: usize, first: String },
    #[error("{0}")]
    Trace(#[from] TraceError),
    #[error("run {run_id}: {err}")]
    Run { run_id: String, err: RunError },
    #[error("run {run_id}: {err}")]
    Instantiate { run_id: String, err: InstantiateError },
    #[error("run {run_id}: {err}")]
    Analytics { run_id: String, err: AnalyticsError },
}

/// Out-of-band measurements for one run, written beside its trace.
/// Host runtime lives here and not in the trace so trace bytes stay
/// host-independent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunSidecar {
    pub run_id: String,
    pub core_runtime_ms: f64,
    pub sim_time_ms: u64,
    pub steps: u64,
    pub events: u64,
    pub reason: String,
}

/// One cell of the executed matrix.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_id: String,
    pub device: String,
    pub dist_kind: String,
    pub rep: u32,
    pub coverage: CoverageReport,
    pub diversity: DiversityReport,
    pub sidecar: RunSidecar,
    /// True when the run was loaded from a previous execution instead
    /// of being executed now.
    pub resumed: bool,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    /// Every cell, in plan order (fixtures, then distributions, then
    /// repetitions).
    pub outcomes: Vec<RunOutcome>,
    pub executed: usize,
    pub skipped: usize,
    pub csv_paths: Vec<PathBuf>,
}

/// Deterministic identity of one matrix cell.
pub fn run_id(device: &str, dist_kind: &str, rep: u32) -> String {
    format!("{device}-{dist_kind}-r{rep:02}")
}

fn device_label(fixture: &Path) -> String {
    fixture.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Executes (or resumes) every run of the plan, then writes the three
/// aggregate CSVs. Independent runs execute in parallel; the outcome
/// list and all outputs are deterministic regardless of worker count.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutput, ExperimentError> {
    let traces_dir = plan.out_dir.join("traces");
    std::fs::create_dir_all(&traces_dir)?;

    let mut models: Vec<(String, EnvironmentModel)> = Vec::new();
    for fixture in &plan.fixtures {
        let text = std::fs::read_to_string(fixture)?;
        let model = parse_model(&text)
            .map_err(|err| ExperimentError::Parse { path: fixture.clone(), err })?;
        let report = validate_model(&model);
        if !report.is_ok() {
            let errors: Vec<String> = report.errors().map(|d| d.to_string()).collect();
            return Err(ExperimentError::Invalid {
                path: fixture.clone(),
                count: errors.len(),
                first: errors.first().cloned().unwrap_or_default(),
            });
        }
        models.push((device_label(fixture), model));
    }

    let mut tasks: Vec<(usize, usize, u32)> = Vec::new();
    for f in 0..models.len() {
        for d in 0..plan.distributions.len() {
            for rep in 0..plan.repetitions {
                tasks.push((f, d, rep));
            }
        }
    }

    let outcomes: Vec<RunOutcome> = tasks
        .par_iter()
        .map(|&(f, d, rep)| {
            let (device, model) = &models[f];
            let dist = &plan.distributions[d];
            one_run(plan, &traces_dir, device, model, dist, rep)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let executed = outcomes.iter().filter(|o| !o.resumed).count();
    let skipped = outcomes.len() - executed;

    let devices: Vec<&str> = models.iter().map(|(d, _)| d.as_str()).collect();
    let mut dist_rows: Vec<&str> = REPORT_DISTRIBUTION_ORDER
        .iter()
        .copied()
        .filter(|k| plan.distributions.iter().any(|d| d.kind_name() == *k))
        .collect();
    for d in &plan.distributions {
        if !dist_rows.contains(&d.kind_name()) {
            dist_rows.push(d.kind_name());
        }
    }

    let mut csv_paths = Vec::new();
    for (file, metric, pick) in [
        ("coverage.csv", "coverage-percent", 0usize),
        ("diversity.csv", "simpson-diversity", 1),
        ("simtime.csv", "core-runtime-ms", 2),
    ] {
        let samples: Vec<RunSample> = outcomes
            .iter()
            .map(|o| RunSample {
                device: o.device.clone(),
                distribution: o.dist_kind.clone(),
                value: match pick {
                    0 => o.coverage.percent,
                    1 => o.diversity.simpson,
                    _ => o.sidecar.core_runtime_ms,
                },
            })
            .collect();
        let table = aggregate(metric, &samples);
        let path = plan.out_dir.join(file);
        std::fs::write(&path, pivot_csv(&table, &devices, &dist_rows))?;
        csv_paths.push(path);
    }

    Ok(ExperimentOutput { outcomes, executed, skipped, csv_paths })
}

/// Executes one cell, or loads it when a complete previous execution is
/// on disk.
fn one_run(
    plan: &ExperimentPlan,
    traces_dir: &Path,
    device: &str,
    model: &EnvironmentModel,
    dist: &DistributionSpec,
    rep: u32,
) -> Result<RunOutcome, ExperimentError> {
    let id = run_id(device, dist.kind_name(), rep);
    let trace_path = traces_dir.join(format!("{id}.jsonl"));
    let sidecar_path = traces_dir.join(format!("{id}.meta.json"));

    if let Some((trace, sidecar)) = load_previous(&trace_path, &sidecar_path) {
        let cov = coverage(&id, &trace, model)
            .map_err(|err| ExperimentError::Analytics { run_id: id.clone(), err })?;
        let div = diversity(&id, &trace);
        return Ok(RunOutcome {
            run_id: id,
            device: device.to_string(),
            dist_kind: dist.kind_name().to_string(),
            rep,
            coverage: cov,
            diversity: div,
            sidecar,
            resumed: true,
        });
    }

    let seed = run_seed(plan.base_seed, device, dist.kind_name(), rep);
    let base = RandomStream::from_seed(seed);
    let mut im = instantiate(model, &plan.params, &mut base.split("instantiate"), DEFAULT_MAX_ATTEMPTS)
        .map_err(|err| ExperimentError::Instantiate { run_id: id.clone(), err })?;
    let mut config = SimulationConfig::new(seed, dist.clone());
    config.once_only = plan.once_only;
    config.max_steps = plan.max_steps;
    let report = run(model, &mut im, &config, &mut NullSink)
        .map_err(|err| ExperimentError::Run { run_id: id.clone(), err })?;

    // Write-then-rename so an interrupted run never leaves a file that a
    // resume would mistake for a finished one.
    let part = traces_dir.join(format!("{id}.jsonl.part"));
    std::fs::write(&part, report.trace.to_jsonl())?;
    std::fs::rename(&part, &trace_path)?;
    let sidecar = RunSidecar {
        run_id: id.clone(),
        core_runtime_ms: report.core_runtime.as_secs_f64() * 1000.0,
        sim_time_ms: report.sim_time_ms,
        steps: report.steps,
        events: report.events,
        reason: report.reason.name().to_string(),
    };
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar).expect("serialises"))?;

    let cov = coverage(&id, &report.trace, model)
        .map_err(|err| ExperimentError::Analytics { run_id: id.clone(), err })?;
    let div = diversity(&id, &report.trace);
    Ok(RunOutcome {
        run_id: id,
        device: device.to_string(),
        dist_kind: dist.kind_name().to_string(),
        rep,
        coverage: cov,
        diversity: div,
        sidecar,
        resumed: false,
    })
}

fn load_previous(trace_path: &Path, sidecar_path: &Path) -> Option<(ExecutionTrace, RunSidecar)> {
    let trace = ExecutionTrace::from_jsonl(&std::fs::read_to_string(trace_path).ok()?).ok()?;
    if !trace.is_complete() {
        return None;
    }
    let sidecar: RunSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path).ok()?).ok()?;
    Some((trace, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"
model Mini
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
      set x = 10;
    }
  }
  state B { }
  state C { }
  final Z;
  transition ab: A -> B on LowBattery belief 0.3;
  transition ac: A -> C belief 0.7;
  transition bz: B -> Z on DeadBattery belief 0.9;
  transition cz: C -> Z belief 0.4;
}
"#;

    fn write_plan(dir: &Path) -> PathBuf {
        std::fs::write(dir.join("mini.envdt"), FIXTURE).unwrap();
        let plan = r#"
fixtures = ["mini.envdt"]
distributions = ["uniform(0, 1)", "exponential(1.5)"]
repetitions = 3
seed = 77
out = "out"
"#;
        let path = dir.join("plan.toml");
        std::fs::write(&path, plan).unwrap();
        path
    }

    #[test]
    fn plan_files_resolve_relative_paths_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_plan(dir.path());
        let plan = load_plan(&path, 1).unwrap();
        assert_eq!(plan.fixtures, vec![dir.path().join("mini.envdt")]);
        assert_eq!(plan.base_seed, 77);
        assert_eq!(plan.repetitions, 3);
        assert!(plan.once_only);
        assert_eq!(plan.max_steps, DEFAULT_MAX_STEPS);
        assert_eq!(plan.out_dir, dir.path().join("out"));
        assert_eq!(plan.distributions[1], DistributionSpec::Exponential { rate: 1.5 });

        // Defaults: no seed in the file → the fallback applies.
        let no_seed = r#"
fixtures = ["mini.envdt"]
distributions = ["uniform(0, 1)"]
"#;
        let p2 = dir.path().join("plan2.toml");
        std::fs::write(&p2, no_seed).unwrap();
        let plan2 = load_plan(&p2, 1234).unwrap();
        assert_eq!(plan2.base_seed, 1234);
        assert_eq!(plan2.repetitions, DEFAULT_REPETITIONS);

        let bad = r#"
fixtures = []
distributions = ["uniform(0, 1)"]
"#;
        let p3 = dir.path().join("plan3.toml");
        std::fs::write(&p3, bad).unwrap();
        assert!(matches!(load_plan(&p3, 1), Err(PlanError::Empty("fixtures"))));
    }

    #[test]
    fn the_matrix_is_deterministic_and_resumable() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let plan_a = load_plan(&write_plan(dir_a.path()), 1).unwrap();
        let plan_b = load_plan(&write_plan(dir_b.path()), 1).unwrap();

        let out_a = run_experiment(&plan_a).unwrap();
        assert_eq!(out_a.outcomes.len(), 6);
        assert_eq!(out_a.executed, 6);
        assert_eq!(out_a.skipped, 0);

        let ids: Vec<&str> = out_a.outcomes.iter().map(|o| o.run_id.as_str()).collect();
        assert_eq!(
            ids,
            vec![
                "mini-uniform-r00",
                "mini-uniform-r01",
                "mini-uniform-r02",
                "mini-exponential-r00",
                "mini-exponential-r01",
                "mini-exponential-r02",
            ]
        );

        // An independent execution produces byte-identical traces.
        let out_b = run_experiment(&plan_b).unwrap();
        for id in &ids {
            let a = std::fs::read(plan_a.out_dir.join("traces").join(format!("{id}.jsonl"))).unwrap();
            let b = std::fs::read(plan_b.out_dir.join("traces").join(format!("{id}.jsonl"))).unwrap();
            assert_eq!(a, b, "trace {id} differs between executions");
        }
        assert!(out_b.csv_paths.iter().all(|p| p.exists()));

        // Rerunning skips everything.
        let again = run_experiment(&plan_a).unwrap();
        assert_eq!(again.executed, 0);
        assert_eq!(again.skipped, 6);

        // Deleting two traces leaves exactly two runs to redo, and the
        // redone traces match the originals.
        for id in &ids[..2] {
            std::fs::remove_file(plan_a.out_dir.join("traces").join(format!("{id}.jsonl"))).unwrap();
        }
        let resumed = run_experiment(&plan_a).unwrap();
        assert_eq!(resumed.executed, 2);
        assert_eq!(resumed.skipped, 4);
        for id in &ids {
            let a = std::fs::read(plan_a.out_dir.join("traces").join(format!("{id}.jsonl"))).unwrap();
            let b = std::fs::read(plan_b.out_dir.join("traces").join(format!("{id}.jsonl"))).unwrap();
            assert_eq!(a, b, "resumed trace {id} differs");
        }

        // Aggregates cover both distributions for the one device.
        let csv = std::fs::read_to_string(plan_a.out_dir.join("coverage.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "distribution,mini_mean,mini_std");
        assert_eq!(lines.len(), 3, "one row per planned distribution: {csv}");
        assert!(lines[1].starts_with("exponential,"), "canonical row order: {csv}");
        assert!(lines[2].starts_with("uniform,"));
    }

    #[test]
    fn seeds_separate_every_cell() {
        let mut seen = std::collections::BTreeSet::new();
        for device in ["karie", "medido", "pilly"] {
            for kind in REPORT_DISTRIBUTION_ORDER {
                for rep in 0..30 {
                    assert!(
                        seen.insert(run_seed(1, device, kind, rep)),
                        "seed collision at {device}/{kind}/{rep}"
                    );
                }
            }
        }
        assert_eq!(seen.len(), 900);
    }
}
