//! Coverage, diversity, and cross-run aggregation.
//!
//! Per run: *coverage* is the share of the model's countable elements —
//! states, transitions, triggerable events, opaque behaviours — that the
//! trace exercised, and *diversity* is Simpson's index over the uncertain
//! signals the run triggered. Across runs the reports fold into
//! mean/standard-deviation cells keyed by device and distribution, and
//! the cells pivot into CSV tables with distributions as rows and
//! per-device (mean, std) column pairs.
//!
//! Two Simpson forms are computed from the same counts: the small-sample
//! form `1 − Σ nᵢ(nᵢ−1) / (N(N−1))` is normative because per-run counts
//! are small; the plug-in form `1 − Σ (nᵢ/N)²` rides along for
//! comparison. Standard deviations use the sample (n−1) denominator.

use std::collections::{BTreeMap, BTreeSet};

use crate::engine::{ExecutionTrace, RecordKind};
use crate::model::{element_census, flatten_elements, ElementId, EnvironmentModel};

/// Distribution row order used by the pivoted report tables.
pub const REPORT_DISTRIBUTION_ORDER: [&str; 10] = [
    "normal",
    "binomial",
    "bernoulli",
    "exponential",
    "gamma",
    "poisson",
    "uniform",
    "geometric",
    "triangular",
    "logarithmic",
];

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("trace references element '{element}' which is not in the model")]
    TraceModelMismatch { element: String },
}

/// Share of the model one run exercised.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub run_id: String,
    pub covered: BTreeSet<ElementId>,
    /// Census denominator: states + transitions + events + behaviours.
    pub total: usize,
    pub percent: f64,
    /// Committed property writes — auxiliary, not part of `percent`.
    pub updates: u64,
}

/// Counts each countable element on its first occurrence in the trace.
pub fn coverage(
    run_id: &str,
    trace: &ExecutionTrace,
    model: &EnvironmentModel,
) -> Result<CoverageReport, AnalyticsError> {
    let known: BTreeSet<String> =
        flatten_elements(model).into_iter().map(|e| e.id.0).collect();
    let mut covered = BTreeSet::new();
    let mut updates = 0u64;
    for r in trace.iter() {
        match r.kind {
            RecordKind::State
            | RecordKind::Transition
            | RecordKind::Event
            | RecordKind::Behavior => {
                if !known.contains(&r.element) {
                    return Err(AnalyticsError::TraceModelMismatch {
                        element: r.element.clone(),
                    });
                }
                covered.insert(ElementId(r.element.clone()));
            }
            RecordKind::Update => updates += 1,
            _ => {}
        }
    }
    let total = element_census(model).coverable_total();
    let percent =
        if total == 0 { 0.0 } else { 100.0 * covered.len() as f64 / total as f64 };
    Ok(CoverageReport { run_id: run_id.to_string(), covered, total, percent, updates })
}

/// Simpson diversity over one run's uncertain signals.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub run_id: String,
    /// Triggered uncertain signals by name.
    pub event_counts: BTreeMap<String, u64>,
    /// Total uncertain triggers.
    pub n: u64,
    /// Small-sample Simpson index — the normative value.
    pub simpson: f64,
    /// Plug-in form, for comparison only.
    pub simpson_naive: f64,
}

/// Counts triggered events whose transition carried a belief annotation,
/// keyed by signal name, and evaluates both Simpson forms.
pub fn diversity(run_id: &str, trace: &ExecutionTrace) -> DiversityReport {
    let mut event_counts: BTreeMap<String, u64> = BTreeMap::new();
    for r in trace.of_kind(RecordKind::Event) {
        let uncertain = r.detail.get("uncertain").and_then(|v| v.as_bool()).unwrap_or(false);
        if !uncertain {
            continue;
        }
        if let Some(signal) = r.detail.get("signal").and_then(|v| v.as_str()) {
            *event_counts.entry(signal.to_string()).or_insert(0) += 1;
        }
    }
    let n = event_counts.values().sum();
    DiversityReport {
        run_id: run_id.to_string(),
        simpson: simpson_unbiased(event_counts.values().copied()),
        simpson_naive: simpson_naive(event_counts.values().copied()),
        event_counts,
        n,
    }
}

/// `1 − Σ nᵢ(nᵢ−1) / (N(N−1))`; defined as 0 when N ≤ 1.
pub fn simpson_unbiased(counts: impl Iterator<Item = u64> + Clone) -> f64 {
    let n: u64 = counts.clone().sum();
    if n < 2 {
        return 0.0;
    }
    let same: u64 = counts.map(|c| c * c.saturating_sub(1)).sum();
    1.0 - same as f64 / (n * (n - 1)) as f64
}

/// `1 − Σ (nᵢ/N)²`; defined as 0 when N = 0.
pub fn simpson_naive(counts: impl Iterator<Item = u64> + Clone) -> f64 {
    let n: u64 = counts.clone().sum();
    if n == 0 {
        return 0.0;
    }
    let sum_sq: f64 = counts.map(|c| (c as f64 / n as f64).powi(2)).sum();
    1.0 - sum_sq
}

/// One run's value of some metric, tagged for grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSample {
    pub device: String,
    pub distribution: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCell {
    pub device: String,
    pub distribution: String,
    /// Repetition count behind the cell; 1 flags a degenerate std.
    pub n: u64,
    pub mean: f64,
    pub std: f64,
}

/// Mean/std cells of one metric, keyed by (device, distribution).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTable {
    pub metric: String,
    pub cells: Vec<AggregateCell>,
}

impl AggregateTable {
    pub fn cell(&self, device: &str, distribution: &str) -> Option<&AggregateCell> {
        self.cells
            .iter()
            .find(|c| c.device == device && c.distribution == distribution)
    }
}

/// Sample mean and standard deviation (n−1 denominator; 0 for n < 2).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Folds per-run samples into one cell per (device, distribution).
pub fn aggregate(metric: &str, samples: &[RunSample]) -> AggregateTable {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for s in samples {
        groups
            .entry((s.device.clone(), s.distribution.clone()))
            .or_default()
            .push(s.value);
    }
    let cells = groups
        .into_iter()
        .map(|((device, distribution), values)| {
            let (mean, std) = mean_std(&values);
            AggregateCell { device, distribution, n: values.len() as u64, mean, std }
        })
        .collect();
    AggregateTable { metric: metric.to_string(), cells }
}

/// Renders a table as CSV: one row per distribution, a (mean, std)
/// column pair per device, cells blank where no runs exist.
pub fn pivot_csv(table: &AggregateTable, devices: &[&str], distributions: &[&str]) -> String {
    let mut out = String::from("distribution");
    for device in devices {
        out.push_str(&format!(",{device}_mean,{device}_std"));
    }
    out.push('\n');
    for dist in distributions {
        out.push_str(dist);
        for device in devices {
            match table.cell(device, dist) {
                Some(c) => out.push_str(&format!(",{:.4},{:.4}", c.mean, c.std)),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}
