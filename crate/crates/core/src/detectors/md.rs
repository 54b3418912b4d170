use nalgebra::{DMatrix, DVector};

use crate::data::Points;
use crate::error::Result;

/// Mahalanobis distance of every point to the sample mean, using the
/// population covariance. A singular covariance gets a ridge of
/// `1e-6 x mean diagonal`.
pub fn run_md(points: &Points) -> Result<Vec<f64>> {
    let (n, d) = (points.n, points.d);
    let mut mu = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mu.iter_mut().zip(points.row(i)) {
            *m += x;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| points.row(i)[j] - mu[j]);
    let cov = centered.transpose() * &centered / n as f64;

    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            let mean_diag = cov.diagonal().mean();
            let ridge = if mean_diag > 0.0 { 1e-6 * mean_diag } else { 1e-12 };
            (cov + DMatrix::identity(d, d) * ridge)
                .cholesky()
                .expect("ridge-regularized covariance is positive definite")
        }
    };

    Ok((0..n)
        .map(|i| {
            let x = DVector::from_iterator(d, centered.row(i).iter().copied());
            let y = chol.l().solve_lower_triangular(&x).expect("cholesky factor is invertible");
            y.norm()
        })
        .collect())
}
