//! Outlier matrix, KL-divergence NMF and rank-1 perspectives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detectors::{normalize_scores, DetectorId, DetectorResult};
use crate::error::{Error, Result};

/// Floor on reconstructed entries inside logarithms and divisions.
pub const EPSILON: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Detectors by points, row-major, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierMatrix {
    pub values: Vec<f64>,
    pub detector_ids: Vec<DetectorId>,
    pub t: usize,
    pub n: usize,
}

impl OutlierMatrix {
    pub fn new(values: Vec<f64>, t: usize, n: usize, detector_ids: Vec<DetectorId>) -> Result<Self> {
        if t == 0 || n == 0 || values.len() != t * n || detector_ids.len() != t {
            return Err(Error::Shape(format!(
                "outlier matrix {t}x{n} with {} values and {} detector ids",
                values.len(),
                detector_ids.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parameter(format!("outlier matrix entry {v} outside [0, 1]")));
        }
        Ok(Self { values, detector_ids, t, n })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn column_means(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| (0..self.t).map(|i| self.values[i * self.n + j]).sum::<f64>() / self.t as f64)
            .collect()
    }
}

/// Stacks the normalized score rows in the given order.
pub fn build_outlier_matrix(results: &[DetectorResult]) -> Result<OutlierMatrix> {
    let first = results
        .first()
        .ok_or_else(|| Error::Shape("no detector results to stack".into()))?;
    let n = first.normalized_scores.len();
    let mut values = Vec::with_capacity(results.len() * n);
    for r in results {
        if r.normalized_scores.len() != n {
            return Err(Error::Shape(format!(
                "detector {} scored {} points, expected {n}",
                r.detector,
                r.normalized_scores.len()
            )));
        }
        values.extend_from_slice(&r.normalized_scores);
    }
    OutlierMatrix::new(values, results.len(), n, results.iter().map(|r| r.detector.clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }
}

/// Rank-g factors `Delta ~ Lambda Omega^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveSet {
    pub g: usize,
    /// `t` rows of `g` non-negative weights.
    pub lambda: Vec<Vec<f64>>,
    /// `n` rows of `g` non-negative weights.
    pub omega: Vec<Vec<f64>>,
    /// Objective after initialization, then after each accepted iteration.
    pub kl_history: Vec<f64>,
    /// Per detector, the component with the largest weight (lowest on ties).
    pub detector_assignment: Vec<usize>,
}

impl PerspectiveSet {
    pub fn final_kl(&self) -> f64 {
        *self.kl_history.last().expect("history holds the initial objective")
    }
}

/// Generalized KL divergence `sum V log(V / R) - V + R`, with `0 log 0 = 0`
/// and `R` floored at [`EPSILON`].
pub fn kl_divergence(v: &[f64], r: &[f64]) -> f64 {
    v.iter()
        .zip(r)
        .map(|(&v, &r)| {
            let r = r.max(EPSILON);
            if v > 0.0 {
                v * (v / r).ln() - v + r
            } else {
                r
            }
        })
        .sum()
}

fn reconstruct(w: &[f64], h: &[f64], t: usize, n: usize, g: usize, out: &mut [f64]) {
    for i in 0..t {
        for j in 0..n {
            let mut s = 0.0;
            for c in 0..g {
                s += w[i * g + c] * h[j * g + c];
            }
            out[i * n + j] = s;
        }
    }
}

/// Rank-g factorization with uniform `(0, 1]` initialization under `seed`.
pub fn klnmf(delta: &OutlierMatrix, g: usize, config: &NmfConfig) -> Result<PerspectiveSet> {
    check_rank(delta, g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| 1.0 - rng.random::<f64>()).collect() };
    let w = draw(delta.t * g);
    let h = draw(delta.n * g);
    factorize(delta, g, w, h, config)
}

/// Like [`klnmf`] from explicit starting factors (`t x g` and `n x g`, row-major).
pub fn klnmf_with_init(delta: &OutlierMatrix, g: usize, lambda: Vec<f64>, omega: Vec<f64>, config: &NmfConfig) -> Result<PerspectiveSet> {
    check_rank(delta, g)?;
    if lambda.len() != delta.t * g || omega.len() != delta.n * g {
        return Err(Error::Shape("initial factors do not match the outlier matrix".into()));
    }
    if lambda.iter().chain(&omega).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Parameter("initial factors must be positive".into()));
    }
    factorize(delta, g, lambda, omega, config)
}

fn check_rank(delta: &OutlierMatrix, g: usize) -> Result<()> {
    let max = delta.t.min(delta.n);
    if g == 0 || g > max {
        return Err(Error::Rank { g, max });
    }
    Ok(())
}

/// Multiplicative updates for the generalized KL objective, alternating
/// `Omega` then `Lambda`. Stops when the relative decrease drops below `tol`;
/// an iteration that would raise the objective (rounding near a fixed point)
/// is discarded and ends the run.
fn factorize(delta: &OutlierMatrix, g: usize, mut w: Vec<f64>, mut h: Vec<f64>, config: &NmfConfig) -> Result<PerspectiveSet> {
    let (t, n) = (delta.t, delta.n);
    let v = &delta.values;
    let mut r = vec![0.0; t * n];
    let mut ratio = vec![0.0; t * n];
    reconstruct(&w, &h, t, n, g, &mut r);
    let mut history = vec![kl_divergence(v, &r)];

    for _ in 0..config.max_iters {
        let (w_prev, h_prev) = (w.clone(), h.clone());

        for (q, (&vv, &rr)) in ratio.iter_mut().zip(v.iter().zip(&r)) {
            *q = vv / rr.max(EPSILON);
        }
        for c in 0..g {
            let wsum: f64 = (0..t).map(|i| w[i * g + c]).sum();
            for j in 0..n {
                let num: f64 = (0..t).map(|i| w[i * g + c] * ratio[i * n + j]).sum();
                h[j * g + c] *= num / wsum.max(EPSILON);
            }
        }

        reconstruct(&w, &h, t, n, g, &mut r);
        for (q, (&vv, &rr)) in ratio.iter_mut().zip(v.iter().zip(&r)) {
            *q = vv / rr.max(EPSILON);
        }
        for c in 0..g {
            let hsum: f64 = (0..n).map(|j| h[j * g + c]).sum();
            for i in 0..t {
                let num: f64 = (0..n).map(|j| h[j * g + c] * ratio[i * n + j]).sum();
                w[i * g + c] *= num / hsum.max(EPSILON);
            }
        }

        reconstruct(&w, &h, t, n, g, &mut r);
        let kl = kl_divergence(v, &r);
        let prev = *history.last().expect("non-empty");
        if !(kl <= prev) {
            w = w_prev;
            h = h_prev;
            break;
        }
        history.push(kl);
        if prev <= 0.0 || (prev - kl) / prev < config.tol {
            break;
        }
    }

    let lambda: Vec<Vec<f64>> = w.chunks(g).map(<[f64]>::to_vec).collect();
    let detector_assignment = lambda.iter().map(|row| argmax(row)).collect();
    Ok(PerspectiveSet {
        g,
        lambda,
        omega: h.chunks(g).map(<[f64]>::to_vec).collect(),
        kl_history: history,
        detector_assignment,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// One rank-1 component of a factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perspective {
    /// Column of the factors this perspective comes from.
    pub component_index: usize,
    /// Total mass of the unclipped component.
    pub mass: f64,
    /// `t x n` rank-1 matrix, clipped to `[0, 1]` for display.
    pub component: Vec<Vec<f64>>,
    pub member_detectors: Vec<usize>,
}

/// The `g` rank-1 components, heaviest first (ties by component index).
pub fn extract_perspectives(factors: &PerspectiveSet) -> Vec<Perspective> {
    let mut out: Vec<Perspective> = (0..factors.g)
        .map(|c| {
            let lam: Vec<f64> = factors.lambda.iter().map(|r| r[c]).collect();
            let om: Vec<f64> = factors.omega.iter().map(|r| r[c]).collect();
            let mass = lam.iter().sum::<f64>() * om.iter().sum::<f64>();
            Perspective {
                component_index: c,
                mass,
                component: lam
                    .iter()
                    .map(|l| om.iter().map(|o| (l * o).clamp(0.0, 1.0)).collect())
                    .collect(),
                member_detectors: factors
                    .detector_assignment
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a == c)
                    .map(|(i, _)| i)
                    .collect(),
            }
        })
        .collect();
    out.sort_by(|a, b| b.mass.total_cmp(&a.mass).then(a.component_index.cmp(&b.component_index)));
    out
}

/// Rank-1 factorization's point weights, rescaled to `[0, 1]`. Their order
/// matches the order of the column means of `delta`.
pub fn ensemble_scores(delta: &OutlierMatrix, seed: u64) -> Result<Vec<f64>> {
    let set = klnmf(
        delta,
        1,
        &NmfConfig {
            seed,
            ..NmfConfig::default()
        },
    )?;
    let omega: Vec<f64> = set.omega.iter().map(|r| r[0]).collect();
    Ok(normalize_scores(&omega))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSubspace;
    use crate::detectors::Algorithm;
    use crate::metrics::spearman;

    fn ids(t: usize) -> Vec<DetectorId> {
        (0..t)
            .map(|i| DetectorId {
                algorithm: Algorithm::ALL[i % 5],
                subspace: FeatureSubspace::new(vec![i]).unwrap(),
            })
            .collect()
    }

    fn matrix(rows: &[Vec<f64>]) -> OutlierMatrix {
        let t = rows.len();
        let n = rows[0].len();
        OutlierMatrix::new(rows.concat(), t, n, ids(t)).unwrap()
    }

    fn random_matrix(t: usize, n: usize, seed: u64) -> OutlierMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t).map(|_| (0..n).map(|_| rng.random()).collect()).collect();
        matrix(&rows)
    }

    /// Product of random positive rank-g factors, scaled into [0, 1].
    fn exact_rank(t: usize, n: usize, g: usize, seed: u64) -> OutlierMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..t * g).map(|_| rng.random_range(0.1..1.0)).collect();
        let b: Vec<f64> = (0..n * g).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut v = vec![0.0; t * n];
        reconstruct(&a, &b, t, n, g, &mut v);
        let max = v.iter().copied().fold(0.0, f64::max);
        v.iter_mut().for_each(|x| *x /= max);
        OutlierMatrix::new(v, t, n, ids(t)).unwrap()
    }

    #[test]
    fn stacking() {
        let mk = |scores: Vec<f64>| DetectorResult {
            detector: ids(1).remove(0),
            raw_scores: scores.clone(),
            normalized_scores: scores,
            wall_clock: 1e-3,
        };
        let m = build_outlier_matrix(&[mk(vec![0.0, 0.5, 1.0, 0.2]), mk(vec![0.0, 0.5, 1.0, 0.2])]).unwrap();
        assert_eq!((m.t, m.n), (2, 4));
        assert_eq!(m.row(0), m.row(1));
        assert!(matches!(build_outlier_matrix(&[mk(vec![0.0, 1.0]), mk(vec![1.0])]), Err(Error::Shape(_))));
        assert!(build_outlier_matrix(&[]).is_err());
    }

    #[test]
    fn rank_one_is_exact() {
        let delta = exact_rank(6, 20, 1, 3);
        let set = klnmf(&delta, 1, &NmfConfig::default()).unwrap();
        assert!(set.final_kl() <= 1e-8, "{}", set.final_kl());
    }

    #[test]
    fn rank_two_recovery() {
        let delta = exact_rank(8, 30, 2, 5);
        let set = klnmf(&delta, 2, &NmfConfig { tol: 0.0, ..NmfConfig::default() }).unwrap();
        assert!(set.final_kl() <= 1e-6, "{}", set.final_kl());
    }

    #[test]
    fn history_never_increases() {
        let delta = random_matrix(7, 25, 11);
        for seed in 0..20 {
            let set = klnmf(&delta, 3, &NmfConfig { seed, ..NmfConfig::default() }).unwrap();
            assert!(set.kl_history.windows(2).all(|w| w[1] <= w[0]));
            assert!(set.lambda.iter().chain(&set.omega).flatten().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn rank_errors() {
        let delta = random_matrix(3, 10, 0);
        assert!(matches!(klnmf(&delta, 4, &NmfConfig::default()), Err(Error::Rank { g: 4, max: 3 })));
        assert!(klnmf(&delta, 0, &NmfConfig::default()).is_err());
    }

    #[test]
    fn argmax_assignment() {
        assert_eq!(argmax(&[0.9, 0.1]), 0);
        assert_eq!(argmax(&[0.2, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
    }

    #[test]
    fn single_component_holds_all_detectors() {
        let delta = random_matrix(4, 12, 2);
        let p = extract_perspectives(&klnmf(&delta, 1, &NmfConfig::default()).unwrap());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].member_detectors, vec![0, 1, 2, 3]);
        assert!(p[0].component.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn block_groups_separate() {
        // Detectors 0..3 flag points 0..5, detectors 3..6 flag points 5..10.
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                (0..10)
                    .map(|j| if (i < 3) == (j < 5) { 0.9 - 0.05 * (i % 3) as f64 } else { 0.0 })
                    .collect()
            })
            .collect();
        let set = klnmf(&matrix(&rows), 2, &NmfConfig::default()).unwrap();
        let a = &set.detector_assignment;
        assert!(a[0] == a[1] && a[1] == a[2]);
        assert!(a[3] == a[4] && a[4] == a[5]);
        assert_ne!(a[0], a[3]);
        let p = extract_perspectives(&set);
        assert!(p[0].mass >= p[1].mass);
    }

    #[test]
    fn ensemble_matches_column_means() {
        for seed in 0..10 {
            let delta = random_matrix(5, 40, 100 + seed);
            let e = ensemble_scores(&delta, seed).unwrap();
            assert!(e.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((spearman(&e, &delta.column_means()) - 1.0).abs() < 1e-12);
        }
        let mut rows = vec![vec![0.1; 6]; 3];
        for r in &mut rows {
            r[4] = 1.0;
        }
        let e = ensemble_scores(&matrix(&rows), 0).unwrap();
        assert_eq!(crate::metrics::top_n(&e, 1), vec![4]);

        let single = matrix(&[vec![0.3, 0.9, 0.0, 0.5]]);
        assert_eq!(crate::metrics::top_n(&ensemble_scores(&single, 1).unwrap(), 4), vec![1, 3, 0, 2]);
    }

    #[test]
    fn row_permutation_permutes_lambda() {
        let delta = random_matrix(5, 15, 8);
        let g = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..5 * g).map(|_| 1.0 - rng.random::<f64>()).collect();
        let h: Vec<f64> = (0..15 * g).map(|_| 1.0 - rng.random::<f64>()).collect();
        let cfg = NmfConfig { max_iters: 50, tol: 0.0, seed: 0 };
        let base = klnmf_with_init(&delta, g, w.clone(), h.clone(), &cfg).unwrap();

        let perm = [3, 0, 4, 1, 2];
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| delta.row(i).to_vec()).collect();
        let pw: Vec<f64> = perm.iter().flat_map(|&i| w[i * g..(i + 1) * g].to_vec()).collect();
        let moved = klnmf_with_init(&matrix(&rows), g, pw, h, &cfg).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..g {
                assert!((moved.lambda[k][c] - base.lambda[i][c]).abs() < 1e-9);
            }
        }
        for (a, b) in moved.omega.iter().zip(&base.omega) {
            for c in 0..g {
                assert!((a[c] - b[c]).abs() < 1e-9);
            }
        }
    }
}
