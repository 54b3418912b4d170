//! End-to-end exploration runs, baseline strategies and run persistence.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, DataMatrix};
use crate::detectors::{execute, DetectorParams, DetectorResult};
use crate::error::{Error, Result};
use crate::meta::{FeatureStatsCache, ModelBundle};
use crate::metrics::{metric_table, MetricRow, DEFAULT_N_VALUES};
use crate::mip::{self, check_feasibility, ExplorationPlan, LowerBoundMode, MipInstance, Violation};
use crate::perspectives::{
    build_outlier_matrix, ensemble_scores, extract_perspectives, klnmf, NmfConfig, OutlierMatrix, Perspective,
    PerspectiveSet,
};
use crate::subspace::{enumerate_candidates, CandidateDetector, EnumerationConfig, SubspaceFamilies};

/// Environment variable naming the root directory for datasets, models and runs.
pub const HOME_ENV: &str = "PERSPEX_HOME";
pub const DEFAULT_LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Strategy {
    /// Budgeted MIP selection.
    #[default]
    #[serde(rename = "MIP")]
    Mip,
    /// Every candidate.
    #[serde(rename = "EE")]
    Ee,
    /// As many random candidates as the MIP selects.
    #[serde(rename = "RSR")]
    Rsr,
    /// One random candidate.
    #[serde(rename = "RS1")]
    Rs1,
    /// One random member of the MIP selection.
    #[serde(rename = "RS1R")]
    Rs1r,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Mip, Strategy::Ee, Strategy::Rsr, Strategy::Rs1, Strategy::Rs1r];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mip => "MIP",
            Strategy::Ee => "EE",
            Strategy::Rsr => "RSR",
            Strategy::Rs1 => "RS1",
            Strategy::Rs1r => "RS1R",
        }
    }

    fn needs_plan(self) -> bool {
        matches!(self, Strategy::Mip | Strategy::Rsr | Strategy::Rs1r)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown strategy {s:?}")))
    }
}

/// Seeds for each randomized stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub enumeration: u64,
    pub detectors: u64,
    pub factorization: u64,
    pub strategy: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            enumeration: seed,
            detectors: seed,
            factorization: seed,
            strategy: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Path to a CSV file, or a dataset name under the home directory.
    pub dataset: String,
    /// Label column; when unset, a column named `label` is used if present.
    pub label_column: Option<String>,
    /// Budget in seconds of estimated detector cost.
    pub t_total: f64,
    pub g: usize,
    pub k: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: Option<usize>,
    pub laplacian_neighbors: usize,
    pub seeds: Seeds,
    /// Model bundle path; defaults to `models/bundle.json` under the home directory.
    pub models: Option<String>,
    pub strategy: Strategy,
    pub lower_bounds: LowerBoundMode,
    pub node_limit: u64,
    /// Detector executions running at once.
    pub workers: usize,
    pub nmf_max_iters: usize,
    pub nmf_tol: f64,
    pub detector: DetectorParams,
    /// Detectors executed by RSR; defaults to the MIP selection size.
    pub rsr_count: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let (k, lambda) = mip::default_parameters();
        let enumeration = EnumerationConfig::default();
        Self {
            dataset: String::new(),
            label_column: None,
            t_total: 0.5,
            g: 1,
            k,
            lambda,
            alpha: enumeration.alpha,
            gamma: None,
            laplacian_neighbors: enumeration.laplacian_neighbors,
            seeds: Seeds::default(),
            models: None,
            strategy: Strategy::Mip,
            lower_bounds: LowerBoundMode::default(),
            node_limit: mip::DEFAULT_NODE_LIMIT,
            workers: 1,
            nmf_max_iters: crate::perspectives::DEFAULT_MAX_ITERS,
            nmf_tol: crate::perspectives::DEFAULT_TOL,
            detector: DetectorParams::default(),
            rsr_count: None,
        }
    }
}

/// A config problem located by its field path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl RunConfig {
    pub fn validate(&self) -> std::result::Result<(), Vec<FieldError>> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: String| {
            errs.push(FieldError {
                field: field.into(),
                message,
            })
        };
        if self.dataset.trim().is_empty() {
            bad("dataset", "must name a dataset".into());
        }
        if !(self.t_total.is_finite() && self.t_total > 0.0) {
            bad("t_total", format!("must be a positive number of seconds, got {}", self.t_total));
        }
        if self.g == 0 {
            bad("g", "must be at least 1".into());
        }
        if self.k == 0 {
            bad("k", "must be at least 1".into());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            bad("lambda", format!("must be non-negative, got {}", self.lambda));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            bad("alpha", format!("must lie in (0, 1], got {}", self.alpha));
        }
        if self.gamma == Some(0) {
            bad("gamma", "must be at least 1".into());
        }
        if self.laplacian_neighbors == 0 {
            bad("laplacian_neighbors", "must be at least 1".into());
        }
        if self.workers == 0 {
            bad("workers", "must be at least 1".into());
        }
        if self.node_limit == 0 {
            bad("node_limit", "must be at least 1".into());
        }
        if self.nmf_max_iters == 0 {
            bad("nmf_max_iters", "must be at least 1".into());
        }
        if !(self.nmf_tol.is_finite() && self.nmf_tol >= 0.0) {
            bad("nmf_tol", format!("must be non-negative, got {}", self.nmf_tol));
        }
        if self.detector.fbod_iterations == 0 {
            bad("detector.fbod_iterations", "must be at least 1".into());
        }
        if self.detector.k_neighbors == Some(0) {
            bad("detector.k_neighbors", "must be at least 1".into());
        }
        if self.detector.sod_ref_neighbors == Some(0) {
            bad("detector.sod_ref_neighbors", "must be at least 1".into());
        }
        if self.rsr_count == Some(0) {
            bad("rsr_count", "must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    fn enumeration(&self) -> EnumerationConfig {
        EnumerationConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            laplacian_neighbors: self.laplacian_neighbors,
            seed: self.seeds.enumeration,
        }
    }

    fn nmf(&self) -> NmfConfig {
        NmfConfig {
            max_iters: self.nmf_max_iters,
            tol: self.nmf_tol,
            seed: self.seeds.factorization,
        }
    }

    fn detector_params(&self) -> DetectorParams {
        DetectorParams {
            seed: self.seeds.detectors,
            ..self.detector.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Completed,
    Infeasible,
    Failed,
}

impl RunStatus {
    pub fn is_final(self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::Infeasible | RunStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub path: String,
    pub n: usize,
    pub m: usize,
    pub column_names: Vec<String>,
    pub outliers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorFailure {
    pub candidate: usize,
    pub detector: String,
    pub error: String,
}

/// Stage durations in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub estimation: f64,
    pub solve: f64,
    /// Sum of the executed detectors' wall-clock times.
    pub execution: f64,
    pub factorization: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub status: RunStatus,
    pub config: RunConfig,
    pub dataset: Option<DatasetSummary>,
    pub families: Option<SubspaceFamilies>,
    pub candidates: Vec<CandidateDetector>,
    pub plan: Option<ExplorationPlan>,
    /// Candidate indices behind `detector_results`, row for row.
    pub executed: Vec<usize>,
    pub detector_results: Vec<DetectorResult>,
    pub failures: Vec<DetectorFailure>,
    /// Candidates not started because of the wall-clock safety stop.
    pub skipped: Vec<usize>,
    pub perspective_set: Option<PerspectiveSet>,
    pub ensemble_scores: Option<Vec<f64>>,
    pub labels: Option<Vec<bool>>,
    pub metrics: Option<Vec<MetricRow>>,
    /// Constraints the plan misses when every bound is read strictly;
    /// non-empty only under adaptive bounds.
    pub violations: Vec<Violation>,
    pub timings: Timings,
    pub error: Option<String>,
}

impl RunResult {
    fn empty(run_id: String, config: RunConfig) -> Self {
        Self {
            run_id,
            status: RunStatus::Failed,
            config,
            dataset: None,
            families: None,
            candidates: Vec::new(),
            plan: None,
            executed: Vec::new(),
            detector_results: Vec::new(),
            failures: Vec::new(),
            skipped: Vec::new(),
            perspective_set: None,
            ensemble_scores: None,
            labels: None,
            metrics: None,
            violations: Vec::new(),
            timings: Timings::default(),
            error: None,
        }
    }

    /// The stored outlier matrix, rebuilt from the detector results.
    pub fn outlier_matrix(&self) -> Result<OutlierMatrix> {
        build_outlier_matrix(&self.detector_results)
    }

    pub fn perspectives(&self) -> Option<Vec<Perspective>> {
        self.perspective_set.as_ref().map(extract_perspectives)
    }

    /// Sum of the estimated costs of the executed detectors.
    pub fn executed_estimated_cost(&self) -> f64 {
        self.executed.iter().map(|&i| self.candidates[i].cost).sum()
    }

    pub fn executed_wall_clock(&self) -> f64 {
        self.detector_results.iter().map(|r| r.wall_clock).sum()
    }

    /// Metric table of the ensemble scores against `labels` (the stored
    /// labels when `None`).
    pub fn evaluate(&self, labels: Option<&[bool]>, n_values: &[usize]) -> Result<Vec<MetricRow>> {
        let labels = labels
            .or(self.labels.as_deref())
            .ok_or_else(|| Error::Parameter("run has no labels; supply them to evaluate".into()))?;
        let scores = self
            .ensemble_scores
            .as_ref()
            .ok_or_else(|| Error::Parameter(format!("run {} has no ensemble scores", self.run_id)))?;
        metric_table(scores, labels, n_values)
    }

    /// Factorizes the stored outlier matrix again with rank `g`; no detector runs.
    pub fn refactorize(&mut self, g: usize) -> Result<&PerspectiveSet> {
        let delta = self.outlier_matrix()?;
        let set = klnmf(&delta, g, &self.config.nmf())?;
        self.config.g = g;
        Ok(self.perspective_set.insert(set))
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            run_id: self.run_id.clone(),
            status: self.status,
            dataset: self.config.dataset.clone(),
            strategy: self.config.strategy,
            t_total: self.config.t_total,
            g: self.config.g,
            detectors: self.detector_results.len(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub status: RunStatus,
    pub dataset: String,
    pub strategy: Strategy,
    pub t_total: f64,
    pub g: usize,
    pub detectors: usize,
}

/// Directory layout under the home root: `datasets/`, `models/`, `runs/`.
#[derive(Debug, Clone)]
pub struct Home {
    pub root: PathBuf,
}

impl Home {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// From [`HOME_ENV`], falling back to the current directory.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(HOME_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from))
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn default_bundle(&self) -> PathBuf {
        self.models_dir().join("bundle.json")
    }

    /// A path as given, else a file under `datasets/`, with or without `.csv`.
    pub fn resolve_dataset(&self, reference: &str) -> Result<PathBuf> {
        let direct = PathBuf::from(reference);
        let under = self.datasets_dir().join(reference);
        let with_ext = self.datasets_dir().join(format!("{reference}.csv"));
        [direct, under, with_ext]
            .into_iter()
            .find(|p| p.is_file())
            .ok_or_else(|| Error::NotFound(format!("dataset {reference:?}")))
    }

    pub fn resolve_bundle(&self, reference: Option<&str>) -> Result<PathBuf> {
        let path = match reference {
            Some(r) => {
                let p = PathBuf::from(r);
                if p.is_file() {
                    p
                } else {
                    self.models_dir().join(r)
                }
            }
            None => self.default_bundle(),
        };
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::NotFound(format!("model bundle {}", path.display())))
        }
    }

    /// CSV files under `datasets/`, sorted by name.
    pub fn list_datasets(&self) -> Result<Vec<DatasetEntry>> {
        let dir = self.datasets_dir();
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(dir, e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "csv") {
                let bytes = entry.metadata().map_err(|e| Error::io(&path, e))?.len();
                out.push(DatasetEntry {
                    name: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                    path: path.display().to_string(),
                    bytes,
                });
            }
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub path: String,
    pub bytes: u64,
}

/// Loads a dataset, using `label_column` when given and otherwise a column
/// named `label` when the header has one.
pub fn load_dataset(path: &Path, label_column: Option<&str>) -> Result<(DataMatrix, Option<Vec<bool>>)> {
    let label = match label_column {
        Some(l) => Some(l.to_owned()),
        None => {
            let mut reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(path)
                .map_err(|e| match e.into_kind() {
                    csv::ErrorKind::Io(io) => Error::io(path, io),
                    other => Error::Parameter(format!("{}: {other:?}", path.display())),
                })?;
            reader
                .headers()?
                .iter()
                .any(|h| h == DEFAULT_LABEL_COLUMN)
                .then(|| DEFAULT_LABEL_COLUMN.to_owned())
        }
    };
    Ok(load_csv(path, label.as_deref())?.into_parts())
}

fn new_run_id() -> String {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    format!("run-{nanos:x}-{}", COUNTER.fetch_add(1, Ordering::Relaxed))
}

/// Runs a config against the home directory: resolves the dataset and the
/// model bundle, then calls [`run_on_data`].
pub fn run_exploration(config: &RunConfig, home: &Home) -> RunResult {
    run_with_id(config, home, new_run_id())
}

pub fn run_with_id(config: &RunConfig, home: &Home, run_id: String) -> RunResult {
    let mut failed = RunResult::empty(run_id.clone(), config.clone());
    if let Err(errs) = config.validate() {
        failed.error = Some(
            errs.iter()
                .map(|e| format!("{}: {}", e.field, e.message))
                .collect::<Vec<_>>()
                .join("; "),
        );
        return failed;
    }
    let loaded = home
        .resolve_dataset(&config.dataset)
        .and_then(|p| load_dataset(&p, config.label_column.as_deref()).map(|d| (p, d)));
    let (path, (data, labels)) = match loaded {
        Ok(x) => x,
        Err(e) => {
            failed.error = Some(e.to_string());
            return failed;
        }
    };
    let bundle = if config.strategy.needs_plan() {
        match home
            .resolve_bundle(config.models.as_deref())
            .and_then(ModelBundle::load)
        {
            Ok(b) => Some(b),
            Err(e) => {
                failed.error = Some(e.to_string());
                return failed;
            }
        }
    } else {
        None
    };
    let mut result = run_on_data(config, &data, labels, bundle.as_ref(), run_id);
    if let Some(d) = result.dataset.as_mut() {
        d.path = path.display().to_string();
    }
    result
}

/// The full pipeline on in-memory data. `bundle` is required by the
/// strategies that solve the MIP.
pub fn run_on_data(
    config: &RunConfig,
    raw: &DataMatrix,
    labels: Option<Vec<bool>>,
    bundle: Option<&ModelBundle>,
    run_id: String,
) -> RunResult {
    let start = Instant::now();
    let mut result = RunResult::empty(run_id, config.clone());
    if let Err(e) = pipeline(config, raw, labels, bundle, &mut result) {
        if result.status != RunStatus::Infeasible {
            result.status = RunStatus::Failed;
        }
        result.error = Some(e.to_string());
    }
    result.timings.total = start.elapsed().as_secs_f64();
    result
}

fn pipeline(
    config: &RunConfig,
    raw: &DataMatrix,
    labels: Option<Vec<bool>>,
    bundle: Option<&ModelBundle>,
    result: &mut RunResult,
) -> Result<()> {
    if let Err(errs) = config.validate() {
        return Err(Error::Parameter(format!("{} invalid field(s), first: {}", errs.len(), errs[0].field)));
    }
    if let Some(l) = &labels {
        if l.len() != raw.n() {
            return Err(Error::Shape(format!("{} labels for {} points", l.len(), raw.n())));
        }
    }
    result.dataset = Some(DatasetSummary {
        path: config.dataset.clone(),
        n: raw.n(),
        m: raw.m(),
        column_names: raw.column_names().to_vec(),
        outliers: labels.as_ref().map(|l| l.iter().filter(|&&b| b).count()),
    });
    result.labels = labels;

    let t0 = Instant::now();
    let data = raw.normalized();
    let families = SubspaceFamilies::enumerate(&data, &config.enumeration())?;
    let mut candidates = enumerate_candidates(&families);
    if let Some(bundle) = bundle {
        let cache = FeatureStatsCache::build(&data, &families);
        bundle.estimate(&mut candidates, data.n(), &cache)?;
    } else if config.strategy.needs_plan() {
        return Err(Error::Parameter(format!("strategy {} needs a model bundle", config.strategy)));
    }
    result.families = Some(families);
    result.candidates = candidates;
    result.timings.estimation = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    if config.strategy.needs_plan() {
        let instance = MipInstance::new(
            result.candidates.clone(),
            config.t_total,
            config.k,
            config.lambda,
            config.lower_bounds,
        )?;
        let solved = mip::solve_adaptive(&instance, config.node_limit);
        result.timings.solve = t1.elapsed().as_secs_f64();
        match solved {
            Ok(plan) => {
                let literal = MipInstance {
                    lower_bounds: LowerBoundMode::Strict,
                    ..instance
                };
                result.violations = check_feasibility(&plan.selected, &literal);
                result.plan = Some(plan);
            }
            Err(e) => {
                result.status = RunStatus::Infeasible;
                return Err(e);
            }
        }
    }

    let chosen = choose(config, result);
    let guarded = config.strategy != Strategy::Ee;
    execute_all(config, &data, &chosen, guarded, result);
    if result.detector_results.is_empty() {
        return Err(Error::Parameter("no detector produced scores".into()));
    }

    let t2 = Instant::now();
    let delta = result.outlier_matrix()?;
    let g = config.g.min(delta.t).min(delta.n);
    result.perspective_set = Some(klnmf(&delta, g, &config.nmf())?);
    result.ensemble_scores = Some(match config.strategy {
        Strategy::Mip => ensemble_scores(&delta, config.seeds.factorization)?,
        _ => crate::detectors::normalize_scores(&delta.column_means()),
    });
    result.timings.factorization = t2.elapsed().as_secs_f64();

    if let Some(labels) = &result.labels {
        result.metrics = Some(metric_table(
            result.ensemble_scores.as_ref().expect("set above"),
            labels,
            &DEFAULT_N_VALUES,
        )?);
    }
    result.status = RunStatus::Completed;
    Ok(())
}

/// Candidate indices to execute, ascending.
fn choose(config: &RunConfig, result: &RunResult) -> Vec<usize> {
    let all: Vec<usize> = (0..result.candidates.len()).collect();
    let planned = result.plan.as_ref().map(|p| p.selected.clone()).unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seeds.strategy);
    let mut chosen = match config.strategy {
        Strategy::Mip => planned,
        Strategy::Ee => all,
        Strategy::Rsr => {
            let count = config.rsr_count.unwrap_or(planned.len()).min(all.len());
            let mut pool = all;
            pool.shuffle(&mut rng);
            pool.truncate(count);
            pool
        }
        Strategy::Rs1 => all.choose(&mut rng).into_iter().copied().collect(),
        Strategy::Rs1r => planned.choose(&mut rng).into_iter().copied().collect(),
    };
    chosen.sort_unstable();
    chosen
}

/// Safety stop: a candidate may start when its estimated cost, scaled up by
/// how far estimates have undershot the wall-clock so far, still fits under
/// `limit` on top of the wall-clock already spent.
fn may_start(wall: f64, estimated_so_far: f64, cost: f64, limit: f64) -> bool {
    let drift = if estimated_so_far > 0.0 { (wall / estimated_so_far).max(1.0) } else { 1.0 };
    wall + drift * cost <= limit
}

/// Runs the chosen candidates on up to `workers` threads. With `guarded`,
/// candidates are held back by [`may_start`] against twice the budget.
/// Results keep candidate order.
fn execute_all(config: &RunConfig, data: &DataMatrix, chosen: &[usize], guarded: bool, result: &mut RunResult) {
    let params = config.detector_params();
    let limit = 2.0 * config.t_total;
    // (wall-clock spent, estimated cost of what was executed)
    let spent = Mutex::new((0.0f64, 0.0f64));
    let candidates = &result.candidates;

    let run_one = |&i: &usize| -> (usize, Option<Result<DetectorResult>>) {
        if guarded {
            let (wall, est) = *spent.lock().expect("no panics while holding the lock");
            if !may_start(wall, est, candidates[i].cost, limit) {
                return (i, None);
            }
        }
        let out = execute(&candidates[i], data, &params);
        if let Ok(r) = &out {
            let mut s = spent.lock().expect("no panics while holding the lock");
            s.0 += r.wall_clock;
            s.1 += candidates[i].cost;
        }
        (i, Some(out))
    };

    let outcomes: Vec<(usize, Option<Result<DetectorResult>>)> = if config.workers <= 1 {
        chosen.iter().map(run_one).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(config.workers).build() {
            Ok(pool) => pool.install(|| chosen.par_iter().map(run_one).collect()),
            Err(_) => chosen.iter().map(run_one).collect(),
        }
    };

    for (i, outcome) in outcomes {
        match outcome {
            None => result.skipped.push(i),
            Some(Ok(r)) => {
                result.executed.push(i);
                result.detector_results.push(r);
            }
            Some(Err(e)) => result.failures.push(DetectorFailure {
                candidate: i,
                detector: candidates[i].label(),
                error: e.to_string(),
            }),
        }
    }
    result.timings.execution = result.executed_wall_clock();
}

/// Persists runs as one JSON document each.
#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
}

impl RunStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    fn path_of(&self, run_id: &str) -> Result<PathBuf> {
        if run_id.is_empty() || !run_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::NotFound(format!("run {run_id:?}")));
        }
        Ok(self.dir.join(format!("{run_id}.json")))
    }

    pub fn save(&self, run: &RunResult) -> Result<PathBuf> {
        let path = self.path_of(&run.run_id)?;
        run.save(&path)?;
        Ok(path)
    }

    pub fn load(&self, run_id: &str) -> Result<RunResult> {
        let path = self.path_of(run_id)?;
        if !path.is_file() {
            return Err(Error::NotFound(format!("run {run_id:?}")));
        }
        RunResult::load(path)
    }

    /// Every stored run, sorted by id.
    pub fn list(&self) -> Result<Vec<RunResult>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))? {
            let path = entry.map_err(|e| Error::io(&self.dir, e))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                out.push(RunResult::load(&path)?);
            }
        }
        out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::planted_outlier_suite;
    use crate::detectors::Algorithm;
    use crate::meta::{ModelKind, RegressionModel, COST_FEATURES, META_FEATURES};

    /// Cost grows with |f| and n; utility is a constant.
    pub(crate) fn toy_bundle(cost_scale: f64) -> ModelBundle {
        let mut models = Vec::new();
        for a in Algorithm::ALL {
            let mut cost = vec![0.0; COST_FEATURES];
            cost[0] = cost_scale * (1 + a.index()) as f64;
            models.push(RegressionModel {
                algorithm: a,
                kind: ModelKind::Cost,
                feature_order: crate::meta::COST_FEATURE_ORDER.into(),
                coefficients: cost,
                intercept: cost_scale,
                training_r2: 1.0,
            });
            models.push(RegressionModel {
                algorithm: a,
                kind: ModelKind::Utility,
                feature_order: crate::meta::META_FEATURE_ORDER.into(),
                coefficients: vec![0.0; META_FEATURES],
                intercept: 0.5 + 0.05 * a.index() as f64,
                training_r2: 1.0,
            });
        }
        ModelBundle::new(models).unwrap()
    }

    fn planted() -> (DataMatrix, Vec<bool>) {
        let d = planted_outlier_suite(120, 4, 4, 10.0, 1).unwrap();
        (d.data, d.labels)
    }

    fn config(strategy: Strategy) -> RunConfig {
        RunConfig {
            dataset: "planted".into(),
            strategy,
            t_total: 0.5,
            lower_bounds: LowerBoundMode::Adaptive,
            ..RunConfig::default()
        }
    }

    #[test]
    fn mip_run_completes_within_budget() {
        let (data, labels) = planted();
        let r = run_on_data(&config(Strategy::Mip), &data, Some(labels), Some(&toy_bundle(1e-3)), "a".into());
        assert_eq!(r.status, RunStatus::Completed, "{:?}", r.error);
        assert!(r.executed_estimated_cost() <= 0.5 + 1e-9);
        let plan = r.plan.as_ref().unwrap();
        // Literal shortfalls can only come from bounds the run relaxed.
        for v in &r.violations {
            let Violation::LowerBound { group, .. } = v else { panic!("budget violated: {v}") };
            assert!(plan.bounds.iter().any(|b| b.group == *group && b.relaxed()));
        }
        assert_eq!(r.metrics.as_ref().unwrap().len(), 5);
        assert_eq!(r.executed, r.plan.as_ref().unwrap().selected);
    }

    #[test]
    fn deterministic_modulo_clocks() {
        let (data, labels) = planted();
        let bundle = toy_bundle(1e-3);
        let strip = |mut r: RunResult| {
            r.timings = Timings::default();
            r.plan.as_mut().unwrap().solver_stats.wall_time = 0.0;
            r.detector_results.iter_mut().for_each(|d| d.wall_clock = 0.0);
            r
        };
        let a = run_on_data(&config(Strategy::Mip), &data, Some(labels.clone()), Some(&bundle), "x".into());
        let b = run_on_data(&config(Strategy::Mip), &data, Some(labels), Some(&bundle), "x".into());
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn parallel_execution_keeps_order() {
        let (data, _) = planted();
        let bundle = toy_bundle(1e-3);
        let seq = run_on_data(&config(Strategy::Mip), &data, None, Some(&bundle), "s".into());
        let par = run_on_data(
            &RunConfig {
                workers: 4,
                ..config(Strategy::Mip)
            },
            &data,
            None,
            Some(&bundle),
            "p".into(),
        );
        assert_eq!(seq.executed, par.executed);
        assert_eq!(seq.outlier_matrix().unwrap().values, par.outlier_matrix().unwrap().values);
    }

    #[test]
    fn strict_run_meets_every_share() {
        let (data, labels) = planted();
        // At 0.05 s every share can be met; at 0.2 s (below) the cheap
        // algorithms' pools fall short of theirs.
        let cfg = RunConfig {
            lower_bounds: LowerBoundMode::Strict,
            t_total: 0.05,
            ..config(Strategy::Mip)
        };
        let r = run_on_data(&cfg, &data, Some(labels), Some(&toy_bundle(1e-3)), "s".into());
        assert_eq!(r.status, RunStatus::Completed, "{:?}", r.error);
        assert!(r.violations.is_empty());
        let plan = r.plan.unwrap();
        assert_eq!(plan.reserve_scale, 1.0);
        assert!(plan.bounds.iter().all(|b| b.required == b.share));

        let (data, _) = planted();
        let larger = RunConfig { t_total: 0.2, ..cfg };
        let r = run_on_data(&larger, &data, None, Some(&toy_bundle(1e-3)), "s".into());
        assert_eq!(r.status, RunStatus::Infeasible);
        let adaptive = RunConfig { lower_bounds: LowerBoundMode::Adaptive, ..larger };
        let r = run_on_data(&adaptive, &data, None, Some(&toy_bundle(1e-3)), "s".into());
        assert_eq!(r.status, RunStatus::Completed, "{:?}", r.error);
        assert!(!r.violations.is_empty());
    }

    #[test]
    fn small_budget_is_infeasible() {
        let (data, _) = planted();
        let cfg = RunConfig {
            lower_bounds: LowerBoundMode::Strict,
            t_total: 1e-3,
            ..config(Strategy::Mip)
        };
        let r = run_on_data(&cfg, &data, None, Some(&toy_bundle(1e-3)), "i".into());
        assert_eq!(r.status, RunStatus::Infeasible);
        assert!(r.error.unwrap().contains("infeasible"));
    }

    #[test]
    fn baselines() {
        let (data, labels) = planted();
        let bundle = toy_bundle(1e-3);
        let ee = run_on_data(&config(Strategy::Ee), &data, Some(labels.clone()), None, "ee".into());
        assert_eq!(ee.executed.len(), ee.candidates.len());

        let mip = run_on_data(&config(Strategy::Mip), &data, None, Some(&bundle), "m".into());
        let rs1r = run_on_data(&config(Strategy::Rs1r), &data, None, Some(&bundle), "r".into());
        assert_eq!(rs1r.executed.len(), 1);
        assert!(mip.plan.unwrap().selected.contains(&rs1r.executed[0]));

        let rs1 = run_on_data(&config(Strategy::Rs1), &data, None, None, "r1".into());
        assert_eq!(rs1.executed.len(), 1);
        assert_eq!(rs1.perspective_set.unwrap().g, 1);

        let all = RunConfig {
            rsr_count: Some(ee.candidates.len()),
            ..config(Strategy::Rsr)
        };
        let rsr = run_on_data(&all, &data, None, Some(&bundle), "rsr".into());
        assert_eq!(rsr.executed, ee.executed);

        let missing = run_on_data(&config(Strategy::Mip), &data, None, None, "n".into());
        assert_eq!(missing.status, RunStatus::Failed);
    }

    #[test]
    fn safety_stop_skips_expensive_detectors() {
        let (data, _) = planted();
        let data = data.normalized();
        let families = SubspaceFamilies::enumerate(&data, &EnumerationConfig::default()).unwrap();
        let mut result = RunResult::empty("stop".into(), config(Strategy::Mip));
        result.candidates = enumerate_candidates(&families);
        for c in &mut result.candidates {
            c.cost = if c.algorithm == Algorithm::Abod { 1.5 } else { 1e-3 };
        }
        let chosen: Vec<usize> = (0..result.candidates.len()).collect();
        execute_all(&config(Strategy::Mip), &data, &chosen, true, &mut result);
        assert!(!result.skipped.is_empty());
        assert!(result.skipped.iter().all(|&i| result.candidates[i].algorithm == Algorithm::Abod));
        assert!(result.executed_wall_clock() <= 1.0);

        let mut unguarded = RunResult::empty("ee".into(), config(Strategy::Ee));
        unguarded.candidates = result.candidates.clone();
        execute_all(&config(Strategy::Ee), &data, &chosen, false, &mut unguarded);
        assert!(unguarded.skipped.is_empty());
    }

    #[test]
    fn safety_stop_scales_by_observed_drift() {
        // Nothing run yet: the estimate is taken at face value.
        assert!(may_start(0.0, 0.0, 0.9, 1.0));
        assert!(!may_start(0.0, 0.0, 1.1, 1.0));
        // Estimates undershot by 3x: a 0.2 estimate counts as 0.6.
        assert!(!may_start(0.3, 0.1, 0.2, 0.8));
        assert!(may_start(0.3, 0.1, 0.2, 0.9));
        // Overestimates never shrink the prediction.
        assert!(!may_start(0.1, 0.5, 0.5, 0.55));
    }

    #[test]
    fn refactorize_reuses_scores() {
        let (data, labels) = planted();
        let mut r = run_on_data(&config(Strategy::Mip), &data, Some(labels), Some(&toy_bundle(1e-3)), "f".into());
        let before = serde_json::to_vec(&r.outlier_matrix().unwrap()).unwrap();
        let g = r.refactorize(3).unwrap().g;
        assert_eq!(g, 3);
        assert_eq!(r.config.g, 3);
        assert_eq!(serde_json::to_vec(&r.outlier_matrix().unwrap()).unwrap(), before);
        assert_eq!(r.perspectives().unwrap().len(), 3);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let (data, labels) = planted();
        let r = run_on_data(&config(Strategy::Mip), &data, Some(labels), Some(&toy_bundle(1e-3)), "keep".into());
        store.save(&r).unwrap();
        let back = store.load("keep").unwrap();
        assert_eq!(back, r);
        assert_eq!(back.evaluate(None, &[10, 13]).unwrap(), r.evaluate(None, &[10, 13]).unwrap());
        assert_eq!(store.list().unwrap().len(), 1);
        assert!(matches!(store.load("missing"), Err(Error::NotFound(_))));
        assert!(matches!(store.load("../etc"), Err(Error::NotFound(_))));
    }

    #[test]
    fn config_validation_reports_fields() {
        let cfg = RunConfig {
            dataset: String::new(),
            t_total: -1.0,
            g: 0,
            ..RunConfig::default()
        };
        let errs = cfg.validate().unwrap_err();
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, vec!["dataset", "t_total", "g"]);
        let parsed: RunConfig = serde_json::from_str(r#"{"dataset": "x", "strategy": "RS1R"}"#).unwrap();
        assert_eq!(parsed.strategy, Strategy::Rs1r);
        assert_eq!(parsed.t_total, 0.5);
    }

    #[test]
    fn missing_dataset_is_reported() {
        let home = Home::new(tempfile::tempdir().unwrap().path());
        let r = run_exploration(&config(Strategy::Ee), &home);
        assert_eq!(r.status, RunStatus::Failed);
        assert!(r.error.unwrap().contains("not found"));
    }
}
