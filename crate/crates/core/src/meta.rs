//! Meta-learned cost and utility estimates for candidate detectors.
//!
//! Cost is regressed per algorithm on the 34 monomials of degree 1..=3 in
//! `(|f|, n, ln|f|, ln n)`. Utility is regressed per algorithm on a 30-value
//! description of the subspace built from per-feature statistics, against the
//! fraction of points on which a detector agrees with expert labels.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{mean, normalize_feature, population_std, DataMatrix, FeatureSubspace, LabeledDataset, ZERO_VARIANCE};
use crate::detectors::{execute, Algorithm, DetectorParams, DetectorResult};
use crate::error::{Error, Result};
use crate::metrics::{spearman, top_n};
use crate::subspace::{enumerate_candidates, CandidateDetector, EnumerationConfig, SubspaceFamilies};

/// Floor applied to cost predictions, in seconds.
pub const MIN_COST: f64 = 1e-6;
pub const COST_FEATURES: usize = 34;
pub const META_FEATURES: usize = 30;
pub const COST_FEATURE_ORDER: &str = "grlex3(|f|,n,ln|f|,ln n)";
pub const META_FEATURE_ORDER: &str =
    "[laplacian,std,skewness,kurtosis,entropy]x[mean,median,mad,min,max,std]";
const RIDGE: f64 = 1e-8;
const ENTROPY_BINS: usize = 10;
/// Stand-in Laplacian score for constant features: the upper end of the
/// score's `[0, 2]` range, keeping meta-features finite.
const DEGENERATE_LAPLACIAN: f64 = 2.0;

/// Exponent vectors over `(|f|, n, ln|f|, ln n)` in graded-lexicographic order.
pub fn cost_monomials() -> Vec<[u8; 4]> {
    let mut out = Vec::with_capacity(COST_FEATURES);
    for degree in 1..=3u8 {
        let mut level = Vec::new();
        for a in 0..=degree {
            for b in 0..=(degree - a) {
                for c in 0..=(degree - a - b) {
                    level.push([a, b, c, degree - a - b - c]);
                }
            }
        }
        level.sort_by(|x, y| y.cmp(x));
        out.extend(level);
    }
    out
}

/// The 34 cost regressors for a subspace of `d` features over `n` points.
pub fn cost_features(n: usize, d: usize) -> Result<Vec<f64>> {
    if n < 2 || d < 1 {
        return Err(Error::Parameter(format!("cost features need n >= 2 and d >= 1, got n = {n}, d = {d}")));
    }
    let base = [d as f64, n as f64, (d as f64).ln(), (n as f64).ln()];
    Ok(cost_monomials()
        .iter()
        .map(|e| base.iter().zip(e).map(|(b, &p)| b.powi(p as i32)).product())
        .collect())
}

/// Per-feature statistics of a normalized column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub laplacian: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub entropy: f64,
}

impl FeatureStats {
    fn as_array(&self) -> [f64; 5] {
        [self.laplacian, self.std, self.skewness, self.kurtosis, self.entropy]
    }
}

/// Population std, skewness `m3 / m2^1.5`, excess kurtosis `m4 / m2^2 - 3` and
/// the entropy (nats) of a 10-bin histogram. A constant column gets zeros.
pub fn feature_level_stats(column: &[f64], laplacian: f64) -> FeatureStats {
    let laplacian = if laplacian.is_finite() { laplacian } else { DEGENERATE_LAPLACIAN };
    let n = column.len() as f64;
    let mu = mean(column);
    let m2 = column.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    let std = m2.sqrt();
    if std <= ZERO_VARIANCE * mu.abs().max(1.0) {
        return FeatureStats {
            laplacian,
            std: 0.0,
            skewness: 0.0,
            kurtosis: 0.0,
            entropy: 0.0,
        };
    }
    let m3 = column.iter().map(|x| (x - mu).powi(3)).sum::<f64>() / n;
    let m4 = column.iter().map(|x| (x - mu).powi(4)).sum::<f64>() / n;

    let (lo, hi) = column
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let width = (hi - lo) / ENTROPY_BINS as f64;
    let mut counts = [0usize; ENTROPY_BINS];
    for &x in column {
        let b = (((x - lo) / width) as usize).min(ENTROPY_BINS - 1);
        counts[b] += 1;
    }
    let entropy = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();

    FeatureStats {
        laplacian,
        std,
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2) - 3.0,
        entropy,
    }
}

/// Feature statistics for every column of the non-redundant bag, computed once.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FeatureStatsCache {
    stats: HashMap<usize, FeatureStats>,
}

impl FeatureStatsCache {
    /// `data` may be raw or normalized; columns are normalized here.
    pub fn build(data: &DataMatrix, families: &SubspaceFamilies) -> Self {
        let stats = families
            .f_nr
            .indices()
            .iter()
            .zip(&families.laplacian)
            .map(|(&c, &l)| (c, feature_level_stats(&normalize_feature(&data.column(c)), l)))
            .collect();
        Self { stats }
    }

    pub fn get(&self, col: usize) -> Option<&FeatureStats> {
        self.stats.get(&col)
    }
}

fn median(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

fn aggregates(values: &mut [f64]) -> [f64; 6] {
    values.sort_by(f64::total_cmp);
    let med = median(values);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    [
        mean(values),
        med,
        median(&dev),
        values[0],
        values[values.len() - 1],
        population_std(values),
    ]
}

/// The 30 subspace-level meta-features, ordered statistic-major:
/// for each of (Laplacian, std, skewness, kurtosis, entropy), the
/// (mean, median, MAD, min, max, std) across the subspace's features.
pub fn meta_feature_vector(subspace: &FeatureSubspace, cache: &FeatureStatsCache) -> Result<Vec<f64>> {
    let rows: Vec<[f64; 5]> = subspace
        .indices()
        .iter()
        .map(|c| {
            cache
                .get(*c)
                .map(FeatureStats::as_array)
                .ok_or_else(|| Error::Parameter(format!("no cached statistics for column {c}")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(META_FEATURES);
    for s in 0..5 {
        let mut col: Vec<f64> = rows.iter().map(|r| r[s]).collect();
        out.extend(aggregates(&mut col));
    }
    Ok(out)
}

/// Fraction of points on which the detector's top-N (N = number of labeled
/// outliers, ties by index) agrees with the labels.
pub fn detection_agreement(scores: &[f64], labels: &[bool]) -> f64 {
    let n = labels.len();
    let n_out = labels.iter().filter(|&&l| l).count();
    let mut predicted = vec![false; n];
    for i in top_n(scores, n_out) {
        predicted[i] = true;
    }
    let hamming = predicted.iter().zip(labels).filter(|(p, l)| p != l).count();
    1.0 - hamming as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cost,
    Utility,
}

impl ModelKind {
    pub fn dimension(self) -> usize {
        match self {
            ModelKind::Cost => COST_FEATURES,
            ModelKind::Utility => META_FEATURES,
        }
    }

    fn feature_order(self) -> &'static str {
        match self {
            ModelKind::Cost => COST_FEATURE_ORDER,
            ModelKind::Utility => META_FEATURE_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub algorithm: Algorithm,
    pub kind: ModelKind,
    pub feature_order: String,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub training_r2: f64,
}

fn r_squared(pred: &[f64], target: &[f64]) -> f64 {
    let mu = mean(target);
    let ss_tot: f64 = target.iter().map(|y| (y - mu).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(target).map(|(p, y)| (p - y).powi(2)).sum();
    if ss_tot <= f64::EPSILON * target.len() as f64 * mu.abs().max(1.0).powi(2) {
        if ss_res <= 1e-18 * target.len() as f64 * mu.abs().max(1.0).powi(2) {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Ordinary least squares with a `1e-8` ridge. Features are standardized for
/// the solve and the coefficients mapped back to raw units.
pub fn train_model(kind: ModelKind, algorithm: Algorithm, samples: &[(Vec<f64>, f64)]) -> Result<RegressionModel> {
    let dim = kind.dimension();
    if samples.len() < dim + 1 {
        return Err(Error::Training(format!(
            "{algorithm} {kind:?} model needs at least {} samples, got {}",
            dim + 1,
            samples.len()
        )));
    }
    if let Some((x, _)) = samples.iter().find(|(x, _)| x.len() != dim) {
        return Err(Error::Dimension { expected: dim, got: x.len() });
    }
    let rows = samples.len();
    let targets: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    let y_mean = mean(&targets);

    let mut center = vec![0.0; dim];
    let mut scale = vec![0.0; dim];
    for j in 0..dim {
        let col: Vec<f64> = samples.iter().map(|(x, _)| x[j]).collect();
        center[j] = mean(&col);
        scale[j] = population_std(&col);
    }
    let active: Vec<usize> = (0..dim)
        .filter(|&j| scale[j] > ZERO_VARIANCE * center[j].abs().max(1.0))
        .collect();

    let mut coefficients = vec![0.0; dim];
    if !active.is_empty() {
        let p = active.len();
        let ridge = RIDGE.sqrt();
        let a = DMatrix::from_fn(rows + p, p, |i, k| {
            if i < rows {
                let j = active[k];
                (samples[i].0[j] - center[j]) / scale[j]
            } else if i - rows == k {
                ridge
            } else {
                0.0
            }
        });
        let b = DVector::from_fn(rows + p, |i, _| if i < rows { targets[i] - y_mean } else { 0.0 });
        let beta = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| Error::Training(format!("least squares failed: {e}")))?;
        for (k, &j) in active.iter().enumerate() {
            coefficients[j] = beta[k] / scale[j];
        }
    }
    let intercept = y_mean - coefficients.iter().zip(&center).map(|(c, m)| c * m).sum::<f64>();

    let mut model = RegressionModel {
        algorithm,
        kind,
        feature_order: kind.feature_order().to_owned(),
        coefficients,
        intercept,
        training_r2: 0.0,
    };
    let fitted: Vec<f64> = samples.iter().map(|(x, _)| model.linear(x)).collect();
    model.training_r2 = r_squared(&fitted, &targets);
    Ok(model)
}

impl RegressionModel {
    fn linear(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Unclamped linear prediction.
    pub fn predict_raw(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.coefficients.len() {
            return Err(Error::Dimension {
                expected: self.coefficients.len(),
                got: features.len(),
            });
        }
        Ok(self.linear(features))
    }
}

/// Linear prediction clamped to the model kind's valid range: costs to at
/// least [`MIN_COST`] seconds, utilities to `[0, 1]`.
pub fn predict(model: &RegressionModel, features: &[f64]) -> Result<f64> {
    let raw = model.predict_raw(features)?;
    Ok(match model.kind {
        ModelKind::Cost => raw.max(MIN_COST),
        ModelKind::Utility => raw.clamp(0.0, 1.0),
    })
}

/// A cost and a utility model for each of the five algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub models: Vec<RegressionModel>,
}

impl ModelBundle {
    pub fn new(models: Vec<RegressionModel>) -> Result<Self> {
        let bundle = Self { models };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.len() != 2 * Algorithm::ALL.len() {
            return Err(Error::Parameter(format!(
                "model bundle must hold exactly 10 models, found {}",
                self.models.len()
            )));
        }
        for a in Algorithm::ALL {
            for kind in [ModelKind::Cost, ModelKind::Utility] {
                let model = self.find(a, kind).ok_or_else(|| {
                    Error::Parameter(format!("model bundle lacks the {kind:?} model for {a}"))
                })?;
                if model.feature_order != kind.feature_order() || model.coefficients.len() != kind.dimension() {
                    return Err(Error::Parameter(format!(
                        "{a} {kind:?} model has feature order {:?} with {} coefficients",
                        model.feature_order,
                        model.coefficients.len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn find(&self, algorithm: Algorithm, kind: ModelKind) -> Option<&RegressionModel> {
        self.models.iter().find(|m| m.algorithm == algorithm && m.kind == kind)
    }

    pub fn model(&self, algorithm: Algorithm, kind: ModelKind) -> &RegressionModel {
        self.find(algorithm, kind).expect("bundle validated on construction")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bundle: ModelBundle = serde_json::from_str(&text)?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Fills in `cost` and `utility` of every candidate.
    pub fn estimate(&self, candidates: &mut [CandidateDetector], n: usize, cache: &FeatureStatsCache) -> Result<()> {
        for c in candidates.iter_mut() {
            let cost_x = cost_features(n, c.subspace.len())?;
            let util_x = meta_feature_vector(&c.subspace, cache)?;
            c.cost = predict(self.model(c.algorithm, ModelKind::Cost), &cost_x)?;
            c.utility = predict(self.model(c.algorithm, ModelKind::Utility), &util_x)?;
        }
        Ok(())
    }
}

/// Knobs for [`train_all`].
#[derive(Debug, Clone)]
pub struct TrainingOptions {
    pub enumeration: EnumerationConfig,
    pub detector: DetectorParams,
    /// Cap on distinct subspaces executed per dataset, spread evenly over
    /// the enumeration order.
    pub max_subspaces_per_dataset: Option<usize>,
    pub train_fraction: f64,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            enumeration: EnumerationConfig::default(),
            detector: DetectorParams::default(),
            max_subspaces_per_dataset: None,
            train_fraction: 0.7,
        }
    }
}

/// Held-out quality of one algorithm's models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeldOutScore {
    pub algorithm: Algorithm,
    pub cost_r2: f64,
    pub utility_r2: f64,
    pub utility_spearman: f64,
    pub test_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub bundle: ModelBundle,
    pub held_out: Vec<HeldOutScore>,
    pub train_datasets: Vec<usize>,
    pub test_datasets: Vec<usize>,
}

/// One executed candidate turned into training samples.
#[derive(Debug, Clone)]
pub struct MetaSample {
    pub algorithm: Algorithm,
    pub cost_x: Vec<f64>,
    pub wall_clock: f64,
    pub utility_x: Vec<f64>,
    pub agreement: f64,
}

/// Executes the enumerated candidates of one labeled dataset and records
/// (cost features, wall-clock) and (meta-features, agreement) pairs.
pub fn collect_samples(dataset: &LabeledDataset, options: &TrainingOptions) -> Result<Vec<MetaSample>> {
    let data = dataset.data.normalized();
    let families = SubspaceFamilies::enumerate(&data, &options.enumeration)?;
    let cache = FeatureStatsCache::build(&data, &families);
    let mut candidates = enumerate_candidates(&families);
    if let Some(cap) = options.max_subspaces_per_dataset {
        // Keep subspaces spread evenly over the enumeration order, so that
        // small and large subspaces are both represented.
        let per = Algorithm::ALL.len();
        let total = candidates.len() / per;
        if cap < total {
            let keep: Vec<usize> = (0..cap.max(1)).map(|i| i * total / cap.max(1)).collect();
            candidates = keep
                .iter()
                .flat_map(|&s| candidates[s * per..(s + 1) * per].to_vec())
                .collect();
        }
    }
    candidates
        .iter()
        .map(|c| {
            let result: DetectorResult = execute(c, &data, &options.detector)?;
            Ok(MetaSample {
                algorithm: c.algorithm,
                cost_x: cost_features(data.n(), c.subspace.len())?,
                wall_clock: result.wall_clock,
                utility_x: meta_feature_vector(&c.subspace, &cache)?,
                agreement: detection_agreement(&result.normalized_scores, &dataset.labels),
            })
        })
        .collect()
}

/// Splits the corpus 70/30 under `split_seed`, trains the ten models on the
/// training part and scores them on the held-out part.
pub fn train_all(corpus: &[LabeledDataset], split_seed: u64, options: &TrainingOptions) -> Result<TrainingReport> {
    if corpus.len() < 10 {
        return Err(Error::Training(format!("need at least 10 datasets, got {}", corpus.len())));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let n_train = ((corpus.len() as f64 * options.train_fraction).round() as usize).clamp(1, corpus.len() - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let gather = |idx: &[usize]| -> Result<Vec<MetaSample>> {
        let mut all = Vec::new();
        for &i in idx {
            all.extend(collect_samples(&corpus[i], options)?);
        }
        Ok(all)
    };
    let train = gather(train_idx)?;
    let test = gather(test_idx)?;

    let mut models = Vec::new();
    let mut held_out = Vec::new();
    for a in Algorithm::ALL {
        let tr: Vec<&MetaSample> = train.iter().filter(|s| s.algorithm == a).collect();
        let te: Vec<&MetaSample> = test.iter().filter(|s| s.algorithm == a).collect();
        let cost = train_model(
            ModelKind::Cost,
            a,
            &tr.iter().map(|s| (s.cost_x.clone(), s.wall_clock)).collect::<Vec<_>>(),
        )?;
        let utility = train_model(
            ModelKind::Utility,
            a,
            &tr.iter().map(|s| (s.utility_x.clone(), s.agreement)).collect::<Vec<_>>(),
        )?;

        let cost_pred: Vec<f64> = te.iter().map(|s| predict(&cost, &s.cost_x)).collect::<Result<_>>()?;
        let cost_true: Vec<f64> = te.iter().map(|s| s.wall_clock).collect();
        let util_pred: Vec<f64> = te.iter().map(|s| predict(&utility, &s.utility_x)).collect::<Result<_>>()?;
        let util_true: Vec<f64> = te.iter().map(|s| s.agreement).collect();
        held_out.push(HeldOutScore {
            algorithm: a,
            cost_r2: r_squared(&cost_pred, &cost_true),
            utility_r2: r_squared(&util_pred, &util_true),
            utility_spearman: spearman(&util_pred, &util_true),
            test_samples: te.len(),
        });
        models.push(cost);
        models.push(utility);
    }

    Ok(TrainingReport {
        bundle: ModelBundle::new(models)?,
        held_out,
        train_datasets: train_idx.to_vec(),
        test_datasets: test_idx.to_vec(),
    })
}

/// Held-out R² of a fitted model on explicit samples.
pub fn held_out_r2(model: &RegressionModel, samples: &[(Vec<f64>, f64)]) -> Result<f64> {
    let pred: Vec<f64> = samples.iter().map(|(x, _)| predict(model, x)).collect::<Result<_>>()?;
    let truth: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    Ok(r_squared(&pred, &truth))
}
