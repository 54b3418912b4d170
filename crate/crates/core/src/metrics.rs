//! Precision, recall and F at N against expert labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Report N values used by default.
pub const DEFAULT_N_VALUES: [usize; 5] = [10, 13, 15, 17, 20];

/// Indices of the `count` highest scores, ties broken by ascending index.
/// NaN scores rank last.
pub fn top_n(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (scores[a], scores[b]);
        match (x.is_nan(), y.is_nan()) {
            (true, true) => a.cmp(&b),
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => y.total_cmp(&x).then(a.cmp(&b)),
        }
    });
    order.truncate(count.min(scores.len()));
    order
}

fn hits(scores: &[f64], labels: &[bool], n: usize) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if n == 0 || n > scores.len() {
        return Err(Error::Parameter(format!("N must lie in 1..={}, got {n}", scores.len())));
    }
    Ok(top_n(scores, n).into_iter().filter(|&i| labels[i]).count())
}

fn outliers(labels: &[bool]) -> Result<usize> {
    match labels.iter().filter(|&&l| l).count() {
        0 => Err(Error::Label {
            row: 0,
            value: "no labeled outliers".into(),
        }),
        c => Ok(c),
    }
}

pub fn precision_at_n(scores: &[f64], labels: &[bool], n: usize) -> Result<f64> {
    Ok(hits(scores, labels, n)? as f64 / n as f64)
}

pub fn recall_at_n(scores: &[f64], labels: &[bool], n: usize) -> Result<f64> {
    let total = outliers(labels)?;
    Ok(hits(scores, labels, n)? as f64 / total as f64)
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f_at_n(scores: &[f64], labels: &[bool], n: usize) -> Result<f64> {
    let p = precision_at_n(scores, labels, n)?;
    let r = recall_at_n(scores, labels, n)?;
    Ok(harmonic(p, r))
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// One row per requested N. N values larger than the point count are clamped.
pub fn metric_table(scores: &[f64], labels: &[bool], n_values: &[usize]) -> Result<Vec<MetricRow>> {
    n_values
        .iter()
        .map(|&n| {
            let n = n.min(scores.len());
            let precision = precision_at_n(scores, labels, n)?;
            let recall = recall_at_n(scores, labels, n)?;
            Ok(MetricRow {
                n,
                precision,
                recall,
                f: harmonic(precision, recall),
            })
        })
        .collect()
}

/// Ranks starting at 1, with tied values sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n == 0 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (x[i] - mx, y[i] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}
