use crate::data::Points;
use crate::error::{Error, Result};

/// Angle-based outlier detection, exact over all point pairs.
///
/// For a point `a` and every pair `(b, c)` of other points, the value
/// `<ab, ac> / (|ab|^2 |ac|^2)` is collected with weight `1 / (|ab| |ac|)`;
/// the angle-based factor is the weighted variance of those values. The
/// returned score is its negation, so that points seen under a narrow range
/// of angles (outliers) score highest. Points coinciding with `a` are skipped.
///
/// Dot products come from the law of cosines on the squared-distance matrix,
/// which makes the inner loop O(1) and the whole detector O(n^3 + n^2 d).
pub fn run_abod(points: &Points) -> Result<Vec<f64>> {
    let n = points.n;
    if n < 3 {
        return Err(Error::Size(format!("ABOD needs at least 3 points, got {n}")));
    }
    let d2 = points.squared_distances();

    let mut factor = vec![f64::NAN; n];
    for a in 0..n {
        let ra = &d2[a * n..(a + 1) * n];
        let (mut sw, mut swv, mut swv2) = (0.0f64, 0.0f64, 0.0f64);
        for b in 0..n {
            let q = ra[b];
            if b == a || q <= 0.0 {
                continue;
            }
            let rb = &d2[b * n..(b + 1) * n];
            for c in (b + 1)..n {
                let r = ra[c];
                if c == a || r <= 0.0 {
                    continue;
                }
                let qr = q * r;
                let dot = 0.5 * (q + r - rb[c]);
                let v = dot / qr;
                let w = 1.0 / qr.sqrt();
                sw += w;
                swv += w * v;
                swv2 += w * v * v;
            }
        }
        if sw > 0.0 {
            let m = swv / sw;
            factor[a] = (swv2 / sw - m * m).max(0.0);
        }
    }

    // Points without a single valid pair sit on top of the others: treat them
    // as the least outlying observed.
    let max_factor = factor.iter().copied().filter(|v| !v.is_nan()).fold(0.0f64, f64::max);
    Ok(factor
        .into_iter()
        .map(|v| if v.is_nan() { -max_factor } else { -v })
        .collect())
}
