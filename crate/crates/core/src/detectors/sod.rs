use crate::data::Points;
use crate::error::{Error, Result};
use crate::neighbors::knn;

/// Subspace outlier degree with a Euclidean k-NN reference set.
///
/// For each point, the attributes in which its reference set varies less than
/// the reference set's mean attribute variance span an axis-parallel
/// subspace; the score is the distance from the point to the reference mean
/// in that subspace, divided by the square root of its dimension. A single
/// attribute is always selected. No selected attribute means score 0.
pub fn run_sod(points: &Points, ref_neighbors: usize) -> Result<Vec<f64>> {
    let (n, d) = (points.n, points.d);
    if ref_neighbors == 0 || ref_neighbors >= n {
        return Err(Error::Parameter(format!(
            "SOD needs 0 < ref_neighbors < n, got {ref_neighbors} with n = {n}"
        )));
    }
    let nn = knn(&points.squared_distances(), n, ref_neighbors);
    let k = ref_neighbors as f64;

    Ok((0..n)
        .map(|i| {
            let mut mu = vec![0.0; d];
            for &j in &nn[i] {
                for (m, x) in mu.iter_mut().zip(points.row(j)) {
                    *m += x;
                }
            }
            mu.iter_mut().for_each(|m| *m /= k);
            let mut var = vec![0.0; d];
            for &j in &nn[i] {
                for ((v, x), m) in var.iter_mut().zip(points.row(j)).zip(&mu) {
                    *v += (x - m) * (x - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= k);
            let mean_var = var.iter().sum::<f64>() / d as f64;

            let x = points.row(i);
            let (mut dist2, mut dims) = (0.0, 0usize);
            for a in 0..d {
                if d == 1 || var[a] < mean_var {
                    dist2 += (x[a] - mu[a]).powi(2);
                    dims += 1;
                }
            }
            if dims == 0 {
                0.0
            } else {
                (dist2 / dims as f64).sqrt()
            }
        })
        .collect())
}
