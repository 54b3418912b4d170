//! The five base outlier detection algorithms. Every detector maps a point set
//! to one raw score per point, higher meaning more outlying.

mod abod;
mod fbod;
mod lof;
mod md;
mod sod;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, FeatureSubspace, Points};
use crate::error::{Error, Result};
use crate::subspace::CandidateDetector;

pub use abod::run_abod;
pub use fbod::run_fbod;
pub use lof::run_lof;
pub use md::run_md;
pub use sod::run_sod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "LOF")]
    Lof,
    #[serde(rename = "MD")]
    Md,
    #[serde(rename = "ABOD")]
    Abod,
    #[serde(rename = "FBOD")]
    Fbod,
    #[serde(rename = "SOD")]
    Sod,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Lof,
        Algorithm::Md,
        Algorithm::Abod,
        Algorithm::Fbod,
        Algorithm::Sod,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Lof => "LOF",
            Algorithm::Md => "MD",
            Algorithm::Abod => "ABOD",
            Algorithm::Fbod => "FBOD",
            Algorithm::Sod => "SOD",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown algorithm {s:?}")))
    }
}

/// Detector hyperparameters. `None` neighbor counts mean `min(10, n - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub k_neighbors: Option<usize>,
    pub fbod_iterations: usize,
    pub sod_ref_neighbors: Option<usize>,
    pub seed: u64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            k_neighbors: None,
            fbod_iterations: 10,
            sod_ref_neighbors: None,
            seed: 0,
        }
    }
}

impl DetectorParams {
    fn neighbors(explicit: Option<usize>, n: usize) -> usize {
        explicit.unwrap_or_else(|| 10.min(n.saturating_sub(1)))
    }
}

/// Identity of an executed detector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectorId {
    pub algorithm: Algorithm,
    pub subspace: FeatureSubspace,
}

impl std::fmt::Display for DetectorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.algorithm, self.subspace)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub detector: DetectorId,
    pub raw_scores: Vec<f64>,
    pub normalized_scores: Vec<f64>,
    /// Seconds.
    pub wall_clock: f64,
}

/// Min-max scaling to `[0, 1]`. A constant vector maps to all `0.5`.
pub fn normalize_scores(raw: &[f64]) -> Vec<f64> {
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|x| ((x - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Raw scores of `algorithm` on an already projected point set.
pub fn run_algorithm(algorithm: Algorithm, points: &Points, params: &DetectorParams, seed: u64) -> Result<Vec<f64>> {
    let n = points.n;
    match algorithm {
        Algorithm::Lof => run_lof(points, DetectorParams::neighbors(params.k_neighbors, n)),
        Algorithm::Md => run_md(points),
        Algorithm::Abod => run_abod(points),
        Algorithm::Fbod => run_fbod(
            points,
            params.fbod_iterations,
            DetectorParams::neighbors(params.k_neighbors, n),
            seed,
        ),
        Algorithm::Sod => run_sod(points, DetectorParams::neighbors(params.sod_ref_neighbors, n)),
    }
}

/// Seed for a detector's private RNG, stable across runs for the same
/// (algorithm, subspace, base seed).
pub fn detector_seed(base: u64, id: &DetectorId) -> u64 {
    // FNV-1a over the identity; no dependency on std's randomized hasher.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(id.algorithm.index() as u64);
    for &c in id.subspace.indices() {
        eat(c as u64);
    }
    h
}

/// Projects, runs and times one candidate.
pub fn execute(candidate: &CandidateDetector, data: &DataMatrix, params: &DetectorParams) -> Result<DetectorResult> {
    let detector = DetectorId {
        algorithm: candidate.algorithm,
        subspace: candidate.subspace.clone(),
    };
    let wrap = |e: Error| Error::Detector {
        detector: detector.to_string(),
        source: Box::new(e),
    };
    candidate.subspace.check_width(data.m()).map_err(wrap)?;
    let seed = detector_seed(params.seed, &detector);

    let start = Instant::now();
    let points = data.project(&candidate.subspace);
    let raw = run_algorithm(candidate.algorithm, &points, params, seed).map_err(wrap)?;
    let normalized = normalize_scores(&raw);
    // Sub-resolution timings still count as positive cost.
    let wall_clock = start.elapsed().as_secs_f64().max(1e-9);

    Ok(DetectorResult {
        detector,
        raw_scores: raw,
        normalized_scores: normalized,
        wall_clock,
    })
}
