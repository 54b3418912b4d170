//! Feature subspace enumeration: the non-redundant feature bag, the
//! Laplacian-ranked prioritized family, the random family, and the candidate
//! detectors built from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{mean, population_std, DataMatrix, FeatureSubspace, ZERO_VARIANCE};
use crate::detectors::Algorithm;
use crate::error::{Error, Result};
use crate::neighbors::knn;

/// Default redundancy threshold.
pub const DEFAULT_ALPHA: f64 = 0.9;
/// Default neighborhood size for the Laplacian-score graph.
pub const DEFAULT_LAPLACIAN_NEIGHBORS: usize = 5;

/// `m x m` absolute Pearson correlations. Constant columns correlate 0 with
/// everything else; the diagonal is 1.
pub fn correlation_matrix(data: &DataMatrix) -> Vec<Vec<f64>> {
    let m = data.m();
    let centered: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let col = data.column(j);
            let mu = mean(&col);
            col.into_iter().map(|x| x - mu).collect()
        })
        .collect();
    let ss: Vec<f64> = centered.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    let constant: Vec<bool> = (0..m)
        .map(|j| (ss[j] / data.n() as f64).sqrt() <= ZERO_VARIANCE)
        .collect();

    let mut sigma = vec![vec![0.0; m]; m];
    for i in 0..m {
        sigma[i][i] = 1.0;
        for j in (i + 1)..m {
            if constant[i] || constant[j] {
                continue;
            }
            let cov: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = (cov / (ss[i] * ss[j]).sqrt()).abs().min(1.0);
            sigma[i][j] = r;
            sigma[j][i] = r;
        }
    }
    sigma
}

/// Greedy redundancy pruning. While the bag has two or more features, take
/// the most correlated pair; if it reaches `alpha`, drop the member with the
/// larger mean correlation against the rest of the bag. Dropped features left
/// without a retained partner at `alpha` are then put back.
///
/// Pair ties go to the lexicographically smallest `(low, high)` index pair.
/// Within the pair, `p` is the higher index and is dropped when its mean
/// correlation is `>=` that of `q`.
pub fn build_nonredundant_bag(data: &DataMatrix, alpha: f64) -> Result<FeatureSubspace> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let sigma = correlation_matrix(data);
    Ok(prune_redundant(&sigma, alpha))
}

pub(crate) fn prune_redundant(sigma: &[Vec<f64>], alpha: f64) -> FeatureSubspace {
    let mut bag: Vec<usize> = (0..sigma.len()).collect();
    while bag.len() >= 2 {
        let mut best: Option<(usize, usize, f64)> = None;
        for (a, &i) in bag.iter().enumerate() {
            for &j in &bag[a + 1..] {
                if best.is_none_or(|(_, _, s)| sigma[i][j] > s) {
                    best = Some((i, j, sigma[i][j]));
                }
            }
        }
        let (low, high, s) = best.expect("bag has at least one pair");
        if s < alpha {
            break;
        }
        let mean_corr = |f: usize| -> f64 {
            bag.iter().filter(|&&o| o != f).map(|&o| sigma[f][o]).sum::<f64>() / (bag.len() - 1) as f64
        };
        let (p, q) = (high, low);
        let drop = if mean_corr(p) >= mean_corr(q) { p } else { q };
        bag.retain(|&f| f != drop);
    }
    readmit_orphans(sigma, alpha, &mut bag);
    FeatureSubspace::new(bag).expect("bag keeps at least one feature")
}

/// A chain of drops (`a` against `b`, then `b` against `c`) can leave a
/// dropped feature with no retained partner at `alpha`. Such a feature is
/// below `alpha` against the whole bag, so it is put back; repeated until
/// every dropped feature has a partner.
fn readmit_orphans(sigma: &[Vec<f64>], alpha: f64, bag: &mut Vec<usize>) {
    loop {
        let orphan = (0..sigma.len()).find(|f| !bag.contains(f) && bag.iter().all(|&s| sigma[*f][s] < alpha));
        match orphan {
            Some(f) => {
                let at = bag.partition_point(|&x| x < f);
                bag.insert(at, f);
            }
            None => break,
        }
    }
}

/// Laplacian score of every bag feature, computed on the projection of the
/// points onto the bag. The graph is the symmetrized `r`-NN graph with heat
/// kernel weights `exp(-d^2 / t)`, `t` the mean squared neighbor distance.
/// Lower is better; constant features score `+inf`.
pub fn laplacian_scores(data: &DataMatrix, bag: &FeatureSubspace, r: usize) -> Result<Vec<f64>> {
    let n = data.n();
    if r == 0 || r >= n {
        return Err(Error::Parameter(format!(
            "laplacian neighbor count r = {r} must satisfy 0 < r < n = {n}"
        )));
    }
    bag.check_width(data.m())?;
    let pts = data.project(bag);
    let d2 = pts.squared_distances();
    let nn = knn(&d2, n, r);

    let mut t = nn
        .iter()
        .enumerate()
        .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
        .map(|(i, j)| d2[i * n + j])
        .sum::<f64>()
        / (n * r) as f64;
    if t <= 0.0 {
        t = 1.0;
    }

    // Sparse symmetric adjacency as (i, j, w) with i < j.
    let mut edges: Vec<(usize, usize)> = nn
        .iter()
        .enumerate()
        .flat_map(|(i, js)| js.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    let weighted: Vec<(usize, usize, f64)> = edges
        .into_iter()
        .map(|(i, j)| (i, j, (-d2[i * n + j] / t).exp()))
        .collect();
    let mut degree = vec![0.0; n];
    for &(i, j, w) in &weighted {
        degree[i] += w;
        degree[j] += w;
    }
    let total_degree: f64 = degree.iter().sum();

    let scores = (0..bag.len())
        .map(|c| {
            let f: Vec<f64> = (0..n).map(|i| pts.row(i)[c]).collect();
            if population_std(&f) <= ZERO_VARIANCE * mean(&f).abs().max(1.0) {
                return f64::INFINITY;
            }
            let shift = f.iter().zip(&degree).map(|(x, d)| x * d).sum::<f64>() / total_degree;
            let ft: Vec<f64> = f.iter().map(|x| x - shift).collect();
            let den: f64 = ft.iter().zip(&degree).map(|(x, d)| d * x * x).sum();
            let num: f64 = weighted.iter().map(|&(i, j, w)| w * (ft[i] - ft[j]).powi(2)).sum();
            if den > 0.0 {
                num / den
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(scores)
}

/// Bag features ordered best-first: ascending score, ties by column index.
pub fn rank_features(bag: &FeatureSubspace, scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = bag.indices().iter().copied().zip(scores.iter().copied()).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    order.into_iter().map(|(c, _)| c).collect()
}

/// The nested chain of top-1, top-2, ..., top-|bag| ranked features.
pub fn build_prioritized_family(bag: &FeatureSubspace, scores: &[f64]) -> Result<Vec<FeatureSubspace>> {
    if scores.len() != bag.len() {
        return Err(Error::Shape(format!(
            "{} scores for a bag of {} features",
            scores.len(),
            bag.len()
        )));
    }
    let ranked = rank_features(bag, scores);
    (1..=ranked.len())
        .map(|l| FeatureSubspace::new(ranked[..l].to_vec()))
        .collect()
}

/// `gamma` subspaces, each bag feature kept independently with probability
/// 1/2. Empty draws are redrawn.
pub fn build_random_family(bag: &FeatureSubspace, gamma: usize, rng_seed: u64) -> Vec<FeatureSubspace> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..gamma)
        .map(|_| loop {
            let pick: Vec<usize> = bag.indices().iter().copied().filter(|_| rng.random::<bool>()).collect();
            if !pick.is_empty() {
                break FeatureSubspace::new(pick).expect("non-empty draw of distinct indices");
            }
        })
        .collect()
}

/// Default size of the random family: half the prioritized family, rounded up.
pub fn default_gamma(prioritized: usize) -> usize {
    prioritized.div_ceil(2)
}

/// Knobs of the subspace enumeration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnumerationConfig {
    pub alpha: f64,
    /// `None` means [`default_gamma`].
    pub gamma: Option<usize>,
    pub laplacian_neighbors: usize,
    pub seed: u64,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            gamma: None,
            laplacian_neighbors: DEFAULT_LAPLACIAN_NEIGHBORS,
            seed: 0,
        }
    }
}

/// The output of subspace enumeration, kept for run reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceFamilies {
    pub f_nr: FeatureSubspace,
    pub f_p: Vec<FeatureSubspace>,
    pub f_r: Vec<FeatureSubspace>,
    pub alpha: f64,
    pub gamma: usize,
    pub seed: u64,
    /// Laplacian score per `f_nr` feature, in `f_nr` order. `null` encodes `+inf`.
    #[serde(with = "crate::serde_util::vec_f64_inf_as_null")]
    pub laplacian: Vec<f64>,
}

impl SubspaceFamilies {
    /// Runs the full enumeration on `data`, which should already be normalized.
    pub fn enumerate(data: &DataMatrix, config: &EnumerationConfig) -> Result<Self> {
        let f_nr = build_nonredundant_bag(data, config.alpha)?;
        let r = config.laplacian_neighbors.min(data.n() - 1);
        let laplacian = laplacian_scores(data, &f_nr, r)?;
        let f_p = build_prioritized_family(&f_nr, &laplacian)?;
        let gamma = config.gamma.unwrap_or_else(|| default_gamma(f_p.len()));
        let f_r = build_random_family(&f_nr, gamma, config.seed);
        Ok(Self {
            f_nr,
            f_p,
            f_r,
            alpha: config.alpha,
            gamma,
            seed: config.seed,
            laplacian,
        })
    }

    /// Laplacian score of column `col`, if it belongs to the bag.
    pub fn laplacian_of(&self, col: usize) -> Option<f64> {
        self.f_nr.indices().binary_search(&col).ok().map(|p| self.laplacian[p])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Origin {
    /// Member `level` (0-based) of the prioritized chain.
    Prioritized { level: usize },
    /// Member `draw` of the random family.
    Random { draw: usize },
}

/// An (algorithm, subspace) pair with its estimated cost (seconds) and utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDetector {
    pub algorithm: Algorithm,
    pub subspace: FeatureSubspace,
    pub cost: f64,
    pub utility: f64,
    pub origin: Origin,
}

impl CandidateDetector {
    pub fn new(algorithm: Algorithm, subspace: FeatureSubspace, origin: Origin) -> Self {
        Self {
            algorithm,
            subspace,
            cost: crate::meta::MIN_COST,
            utility: 0.0,
            origin,
        }
    }

    pub fn prioritized_level(&self) -> Option<usize> {
        match self.origin {
            Origin::Prioritized { level } => Some(level),
            Origin::Random { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.algorithm, self.subspace)
    }
}

/// One candidate per (subspace, algorithm) over the union of both families.
/// Subspaces drawn into the random family that already occur (in either
/// family) are skipped, so prioritized origin wins.
pub fn enumerate_candidates(families: &SubspaceFamilies) -> Vec<CandidateDetector> {
    let mut seen = std::collections::HashSet::new();
    let mut subspaces = Vec::new();
    for (level, s) in families.f_p.iter().enumerate() {
        if seen.insert(s.clone()) {
            subspaces.push((s.clone(), Origin::Prioritized { level }));
        }
    }
    for (draw, s) in families.f_r.iter().enumerate() {
        if seen.insert(s.clone()) {
            subspaces.push((s.clone(), Origin::Random { draw }));
        }
    }
    subspaces
        .into_iter()
        .flat_map(|(s, origin)| {
            Algorithm::ALL
                .iter()
                .map(move |&a| CandidateDetector::new(a, s.clone(), origin))
        })
        .collect()
}
