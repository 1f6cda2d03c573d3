//! Experiment grids over methods, perturbation scales and probes.
//!
//! Every cell (method, δ, probe) runs against a fresh oracle with its own
//! ledger and a seed derived from the master seed and the cell's identity:
//!
//! ```text
//! cell seed = split_seed(master, [probe_key, method_code, δ.to_bits()])
//! ```
//!
//! where `probe_key` hashes the probe's components and label. Cells are
//! therefore independent of grid and probe ordering and can be re-run alone.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{run_attack, AttackConfig, AttackError, AttackOutcome};
use crate::estimator::{EstimatorConfig, Method, Sidedness};
use crate::mlp::{load_probes, MlpModel, ModelError, Probe};
use crate::oracle::{Classifier, LocalOracle};
use crate::rng::{split_seed, splitmix64, SeededRng};

/// Layer widths of the bundled desk-scale benchmark model (input first).
pub const BENCHMARK_DIMS: [usize; 2] = [64, 32];
pub const BENCHMARK_CLASSES: usize = 10;
pub const BENCHMARK_PROBES: usize = 50;
pub const BENCHMARK_SEED: u64 = 1;

/// The bundled benchmark: a 64-32-10 ReLU network and 50 probes it labels.
pub fn desk_benchmark() -> (MlpModel, Vec<Probe>) {
    crate::mlp::gen_model(&BENCHMARK_DIMS, BENCHMARK_CLASSES, BENCHMARK_PROBES, BENCHMARK_SEED)
        .expect("benchmark dimensions are valid")
}

/// CSV column order of a report.
pub const CSV_COLUMNS: [&str; 12] = [
    "method",
    "sidedness",
    "delta",
    "success_rate_pct",
    "median_queries_succ",
    "median_queries_all",
    "n_probes",
    "n_samples",
    "step_size",
    "epsilon",
    "budget",
    "seed",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("failed to load {what} from {path}: {source}")]
    Load {
        what: &'static str,
        path: String,
        #[source]
        source: ModelError,
    },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("attack on probe {probe} ({method}, delta {delta}) failed: {source}")]
    Attack {
        probe: usize,
        method: Method,
        delta: f64,
        #[source]
        source: AttackError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed report {path}: {reason}")]
    MalformedReport { path: String, reason: String },
}

/// An experiment with its model and probes loaded.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub model: Arc<MlpModel>,
    pub probes: Vec<Probe>,
    pub methods: Vec<Method>,
    pub deltas: Vec<f64>,
    /// Template; the estimator's kind, sidedness and δ are set per cell.
    pub attack: AttackConfig,
    pub seed: u64,
    /// Concurrent cells; 0 uses all cores.
    pub workers: usize,
}

/// On-disk experiment description, as read by `zog experiment --spec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub model: PathBuf,
    pub probes: PathBuf,
    pub methods: Vec<String>,
    pub deltas: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Defaults to ε/10.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "default_samples")]
    pub n: usize,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default = "default_iterations")]
    pub max_iterations: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
}

fn default_epsilon() -> f64 {
    crate::attack::DEFAULT_EPSILON
}
fn default_samples() -> usize {
    crate::estimator::DEFAULT_SAMPLES
}
fn default_budget() -> u64 {
    crate::oracle::DEFAULT_BUDGET
}
fn default_iterations() -> u64 {
    crate::attack::DEFAULT_MAX_ITERATIONS
}

impl ExperimentFile {
    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn load(&self) -> Result<ExperimentSpec, HarnessError> {
        let model = MlpModel::load(&self.model).map_err(|source| HarnessError::Load {
            what: "model",
            path: self.model.display().to_string(),
            source,
        })?;
        let probes = load_probes(&self.probes).map_err(|source| HarnessError::Load {
            what: "probes",
            path: self.probes.display().to_string(),
            source,
        })?;
        let methods = self
            .methods
            .iter()
            .map(|m| m.parse::<Method>().map_err(HarnessError::Invalid))
            .collect::<Result<Vec<_>, _>>()?;
        let template = methods
            .first()
            .map(|m| EstimatorConfig::for_method(*m))
            .ok_or_else(|| HarnessError::Invalid("no methods given".into()))?
            .with_samples(self.n);
        let mut attack = AttackConfig::new(template).with_epsilon(self.epsilon);
        if let Some(step) = self.step_size {
            attack.step_size = step;
        }
        attack.budget = self.budget;
        attack.max_iterations = self.max_iterations;
        Ok(ExperimentSpec {
            model: Arc::new(model),
            probes,
            methods,
            deltas: self.deltas.clone(),
            attack,
            seed: self.seed,
            workers: self.workers,
        })
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.methods.is_empty() || self.deltas.is_empty() {
            return Err(HarnessError::Invalid("method and delta lists must be nonempty".into()));
        }
        if self.probes.is_empty() {
            return Err(HarnessError::Invalid("probe set is empty".into()));
        }
        let d = self.model.input_dim();
        if let Some((i, p)) = self.probes.iter().enumerate().find(|(_, p)| p.x.len() != d) {
            return Err(HarnessError::Invalid(format!(
                "probe {i} has {} components, model expects {d}",
                p.x.len()
            )));
        }
        for &delta in &self.deltas {
            self.cell_config(self.methods[0], delta)
                .validate()
                .map_err(|e| HarnessError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    fn cell_config(&self, method: Method, delta: f64) -> AttackConfig {
        let mut cfg = self.attack.clone();
        cfg.estimator.kind = method.kind;
        cfg.estimator.sidedness = method.sidedness;
        cfg.estimator.delta = delta;
        cfg
    }
}

/// Order-independent key of a probe.
pub fn probe_key(probe: &Probe) -> u64 {
    probe
        .x
        .iter()
        .map(|v| v.to_bits())
        .chain([probe.label as u64])
        .fold(0x5A4F_475F_5052_4F42, |h, bits| splitmix64(h ^ bits))
}

fn method_code(method: Method) -> u64 {
    let kind = method.kind as u64;
    kind * 2 + u64::from(method.sidedness == Sidedness::TwoSided)
}

/// Seed of one grid cell.
pub fn cell_seed(master: u64, probe: &Probe, method: Method, delta: f64) -> u64 {
    split_seed(master, &[probe_key(probe), method_code(method), delta.to_bits()])
}

/// One attack in the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOutcome {
    pub method: Method,
    pub delta: f64,
    pub probe: usize,
    pub seed: u64,
    pub outcome: AttackOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub sidedness: u8,
    pub delta: f64,
    pub success_rate_pct: f64,
    /// Median queries over successful attacks; absent when none succeeded.
    pub median_queries_succ: Option<u64>,
    /// Median queries over all attacks, failures counted at the budget.
    pub median_queries_all: u64,
    pub n_probes: usize,
    pub n_samples: usize,
    pub step_size: f64,
    pub epsilon: f64,
    pub budget: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MedianMode {
    Successes,
    AllCapped,
}

/// Median query count; even-length lists take the lower central value.
pub fn median_queries(
    outcomes: &[AttackOutcome],
    mode: MedianMode,
    budget: u64,
) -> Result<Option<u64>, HarnessError> {
    if outcomes.is_empty() {
        return Err(HarnessError::Invalid("median of an empty outcome list".into()));
    }
    let mut counts: Vec<u64> = match mode {
        MedianMode::Successes => outcomes.iter().filter(|o| o.success).map(|o| o.queries).collect(),
        MedianMode::AllCapped => outcomes
            .iter()
            .map(|o| if o.success { o.queries } else { budget })
            .collect(),
    };
    Ok(lower_median(&mut counts))
}

fn lower_median(values: &mut [u64]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    Some(values[(values.len() - 1) / 2])
}

/// Runs every cell of the grid and aggregates one row per (method, δ).
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, HarnessError> {
    run_experiment_detailed(spec).map(|(report, _)| report)
}

/// As [`run_experiment`], also returning every cell's outcome.
pub fn run_experiment_detailed(
    spec: &ExperimentSpec,
) -> Result<(ExperimentReport, Vec<CellOutcome>), HarnessError> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &method in &spec.methods {
        for &delta in &spec.deltas {
            for probe in 0..spec.probes.len() {
                cells.push((method, delta, probe));
            }
        }
    }

    let run_cell = |&(method, delta, index): &(Method, f64, usize)| {
        let cfg = spec.cell_config(method, delta);
        let probe = &spec.probes[index];
        let seed = cell_seed(spec.seed, probe, method, delta);
        let oracle = LocalOracle::new(Arc::clone(&spec.model), cfg.budget);
        run_attack(&oracle, &probe.x, &cfg, &mut SeededRng::new(seed), None)
            .map(|outcome| CellOutcome {
                method,
                delta,
                probe: index,
                seed,
                outcome,
            })
            .map_err(|source| HarnessError::Attack {
                probe: index,
                method,
                delta,
                source,
            })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| HarnessError::Invalid(format!("worker pool: {e}")))?;
    let outcomes: Vec<CellOutcome> =
        pool.install(|| cells.par_iter().map(run_cell).collect::<Result<_, _>>())?;

    let mut rows = Vec::new();
    for &method in &spec.methods {
        for &delta in &spec.deltas {
            let group: Vec<AttackOutcome> = outcomes
                .iter()
                .filter(|c| c.method == method && c.delta.to_bits() == delta.to_bits())
                .map(|c| c.outcome.clone())
                .collect();
            let cfg = spec.cell_config(method, delta);
            let successes = group.iter().filter(|o| o.success).count();
            rows.push(ReportRow {
                method: method.kind.method_name().to_string(),
                sidedness: method.sidedness.as_number(),
                delta,
                success_rate_pct: 100.0 * successes as f64 / group.len() as f64,
                median_queries_succ: median_queries(&group, MedianMode::Successes, cfg.budget)?,
                median_queries_all: median_queries(&group, MedianMode::AllCapped, cfg.budget)?
                    .expect("group is nonempty"),
                n_probes: group.len(),
                n_samples: cfg.estimator.n,
                step_size: cfg.step_size,
                epsilon: cfg.epsilon,
                budget: cfg.budget,
                seed: spec.seed,
            });
        }
    }
    Ok((ExperimentReport { rows }, outcomes))
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        writer.write_record(CSV_COLUMNS).expect("in-memory write");
        for row in &self.rows {
            writer.serialize(row).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| e.to_string())?;
        if headers.iter().ne(CSV_COLUMNS) {
            return Err(format!("unexpected header {headers:?}"));
        }
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<ReportRow>, _>>()
            .map_err(|e| e.to_string())?;
        Ok(Self { rows })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// `.json` files are JSON, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

pub fn write_report(
    report: &ExperimentReport,
    format: ReportFormat,
    path: &Path,
) -> Result<(), HarnessError> {
    let text = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json(),
    };
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_report(format: ReportFormat, path: &Path) -> Result<ExperimentReport, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        ReportFormat::Csv => ExperimentReport::from_csv(&text),
        ReportFormat::Json => ExperimentReport::from_json(&text),
    }
    .map_err(|reason| HarnessError::MalformedReport {
        path: path.display().to_string(),
        reason,
    })
}
