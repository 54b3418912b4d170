use crate::data::Points;
use crate::error::{Error, Result};
use crate::neighbors::knn;

const LRD_EPS: f64 = 1e-12;

/// Local outlier factor with exactly `k` neighbors per point (distance ties
/// broken by index).
pub fn run_lof(points: &Points, k: usize) -> Result<Vec<f64>> {
    let n = points.n;
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!("LOF needs 0 < k < n, got k = {k}, n = {n}")));
    }
    let d2 = points.squared_distances();
    let nn = knn(&d2, n, k);
    let dist = |i: usize, j: usize| d2[i * n + j].sqrt();

    let k_distance: Vec<f64> = (0..n).map(|i| dist(i, nn[i][k - 1])).collect();
    let lrd: Vec<f64> = (0..n)
        .map(|i| {
            let reach: f64 = nn[i].iter().map(|&j| k_distance[j].max(dist(i, j))).sum();
            1.0 / (reach / k as f64 + LRD_EPS)
        })
        .collect();
    Ok((0..n)
        .map(|i| nn[i].iter().map(|&j| lrd[j]).sum::<f64>() / (k as f64 * lrd[i]))
        .collect())
}
