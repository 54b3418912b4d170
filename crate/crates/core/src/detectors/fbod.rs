use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lof::run_lof;
use crate::data::Points;
use crate::error::{Error, Result};

/// Feature bagging over LOF: each iteration draws between `ceil(d/2)` and
/// `d - 1` of the coordinates (all of them when `d = 1`), runs LOF there and
/// adds the scores to a running sum.
pub fn run_fbod(points: &Points, iterations: usize, k: usize, seed: u64) -> Result<Vec<f64>> {
    if iterations == 0 {
        return Err(Error::Parameter("FBOD needs at least one iteration".into()));
    }
    let d = points.d;
    if d == 0 {
        return Err(Error::Parameter("FBOD needs at least one feature".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = vec![0.0; points.n];
    let mut coords: Vec<usize> = (0..d).collect();
    for _ in 0..iterations {
        let size = if d == 1 { 1 } else { rng.random_range(d.div_ceil(2)..=d - 1) };
        for i in 0..size {
            let j = rng.random_range(i..d);
            coords.swap(i, j);
        }
        let mut pick = coords[..size].to_vec();
        pick.sort_unstable();
        let scores = run_lof(&points.select(&pick), k)?;
        for (t, s) in total.iter_mut().zip(scores) {
            *t += s;
        }
    }
    Ok(total)
}
