//! Dataset representation, CSV ingestion, feature normalization and the
//! synthetic labeled corpus used to train the meta-models.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n x m` matrix of finite reals, stored row-major, with unique column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    values: Vec<f64>,
    n: usize,
    m: usize,
    column_names: Vec<String>,
}

impl DataMatrix {
    pub fn new(values: Vec<f64>, n: usize, m: usize, column_names: Vec<String>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Size(format!("need at least 2 rows, got {n}")));
        }
        if m < 1 {
            return Err(Error::Size("need at least 1 column".into()));
        }
        if values.len() != n * m {
            return Err(Error::Shape(format!(
                "{} values for a {n}x{m} matrix",
                values.len()
            )));
        }
        if column_names.len() != m {
            return Err(Error::Shape(format!(
                "{} column names for {m} columns",
                column_names.len()
            )));
        }
        let mut seen = HashSet::with_capacity(m);
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Parameter(format!("duplicate column name {name:?}")));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "non-finite value at row {}, column {}",
                pos / m,
                pos % m
            )));
        }
        Ok(Self {
            values,
            n,
            m,
            column_names,
        })
    }

    /// Builds a matrix from rows, naming the columns `f0, f1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let names = (0..m).map(|j| format!("f{j}")).collect();
        Self::new(rows.concat(), n, m, names)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.m + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.m..(row + 1) * self.m]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, col)).collect()
    }

    /// Copy of the matrix with every column z-score normalized.
    pub fn normalized(&self) -> DataMatrix {
        let mut values = vec![0.0; self.values.len()];
        for j in 0..self.m {
            for (i, v) in normalize_feature(&self.column(j)).into_iter().enumerate() {
                values[i * self.m + j] = v;
            }
        }
        DataMatrix {
            values,
            n: self.n,
            m: self.m,
            column_names: self.column_names.clone(),
        }
    }

    /// Row-major copy of the columns in `subspace`.
    pub fn project(&self, subspace: &FeatureSubspace) -> Points {
        let cols = subspace.indices();
        let d = cols.len();
        let mut values = Vec::with_capacity(self.n * d);
        for i in 0..self.n {
            let row = self.row(i);
            values.extend(cols.iter().map(|&c| row[c]));
        }
        Points {
            values,
            n: self.n,
            d,
        }
    }

    /// Row permutation, used by order-invariance tests.
    pub fn permute_rows(&self, order: &[usize]) -> DataMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        DataMatrix {
            values,
            n: self.n,
            m: self.m,
            column_names: self.column_names.clone(),
        }
    }
}

/// Dense row-major point set: the projection of a dataset onto a subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    pub values: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

impl Points {
    pub fn new(values: Vec<f64>, n: usize, d: usize) -> Self {
        assert_eq!(values.len(), n * d, "points buffer does not match n x d");
        Self { values, n, d }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    /// Keeps only the listed coordinates (positions within this point set).
    pub fn select(&self, coords: &[usize]) -> Points {
        let mut values = Vec::with_capacity(self.n * coords.len());
        for i in 0..self.n {
            let row = self.row(i);
            values.extend(coords.iter().map(|&c| row[c]));
        }
        Points {
            values,
            n: self.n,
            d: coords.len(),
        }
    }

    /// Full `n x n` matrix of squared Euclidean distances.
    pub fn squared_distances(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let a = self.row(i);
            for j in (i + 1)..n {
                let d2: f64 = a
                    .iter()
                    .zip(self.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                out[i * n + j] = d2;
                out[j * n + i] = d2;
            }
        }
        out
    }
}

/// A dataset together with expert outlier labels (`true` = outlier).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub data: DataMatrix,
    pub labels: Vec<bool>,
}

impl LabeledDataset {
    pub fn new(data: DataMatrix, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != data.n() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                data.n()
            )));
        }
        if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
            return Err(Error::Parameter(
                "labels must contain at least one outlier and one inlier".into(),
            ));
        }
        Ok(Self { data, labels })
    }

    pub fn outlier_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// A non-empty, strictly increasing set of column indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FeatureSubspace(Vec<usize>);

impl FeatureSubspace {
    /// Sorts and validates the indices. Duplicates and empty sets are rejected.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Parameter("feature subspace must be non-empty".into()));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter(format!(
                "duplicate index in feature subspace {indices:?}"
            )));
        }
        Ok(Self(indices))
    }

    pub fn full(m: usize) -> Self {
        Self((0..m).collect())
    }

    /// Checks that every index addresses a column of a width-`m` matrix.
    pub fn check_width(&self, m: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last < m => Ok(()),
            _ => Err(Error::Parameter(format!(
                "subspace {:?} out of range for {m} columns",
                self.0
            ))),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, col: usize) -> bool {
        self.0.binary_search(&col).is_ok()
    }

    pub fn is_subset_of(&self, other: &FeatureSubspace) -> bool {
        self.0.iter().all(|&c| other.contains(c))
    }
}

impl TryFrom<Vec<usize>> for FeatureSubspace {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FeatureSubspace> for Vec<usize> {
    fn from(s: FeatureSubspace) -> Self {
        s.0
    }
}

impl std::fmt::Display for FeatureSubspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "}}")
    }
}

/// Result of [`load_csv`]: labeled when a label column was requested.
#[derive(Debug, Clone)]
pub enum Loaded {
    Unlabeled(DataMatrix),
    Labeled(LabeledDataset),
}

impl Loaded {
    pub fn data(&self) -> &DataMatrix {
        match self {
            Loaded::Unlabeled(d) => d,
            Loaded::Labeled(l) => &l.data,
        }
    }

    pub fn labels(&self) -> Option<&[bool]> {
        match self {
            Loaded::Unlabeled(_) => None,
            Loaded::Labeled(l) => Some(&l.labels),
        }
    }

    pub fn into_parts(self) -> (DataMatrix, Option<Vec<bool>>) {
        match self {
            Loaded::Unlabeled(d) => (d, None),
            Loaded::Labeled(l) => (l.data, Some(l.labels)),
        }
    }
}

/// Reads a comma-separated file with a header row. When `label_column` is
/// given, that column is removed from the features and parsed as 0/1 labels.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Loaded> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();

    let label_idx = match label_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Parameter(format!("label column {name:?} not in header"))
        })?),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| Some(c) != label_idx).collect();
    let names: Vec<String> = feature_cols.iter().map(|&c| headers[c].clone()).collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("");
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                Error::MalformedCell {
                    row,
                    column: c,
                    name: headers[c].clone(),
                    value: cell.to_owned(),
                }
            })?;
            values.push(v);
        }
        if let Some(li) = label_idx {
            let cell = record.get(li).unwrap_or("");
            let label = match cell {
                "0" | "0.0" => false,
                "1" | "1.0" => true,
                other => {
                    return Err(Error::Label {
                        row,
                        value: other.to_owned(),
                    })
                }
            };
            labels.push(label);
        }
        n += 1;
    }
    if n < 2 {
        return Err(Error::Size(format!(
            "{} has {n} data rows, need at least 2",
            path.display()
        )));
    }
    let data = DataMatrix::new(values, n, names.len(), names)?;
    match label_idx {
        Some(_) => Ok(Loaded::Labeled(LabeledDataset::new(data, labels)?)),
        None => Ok(Loaded::Unlabeled(data)),
    }
}

/// Writes `data` (and optionally a trailing label column) as CSV.
/// Values use Rust's shortest round-trip float formatting.
pub fn write_csv(
    path: impl AsRef<Path>,
    data: &DataMatrix,
    labels: Option<(&str, &[bool])>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = data.column_names().join(",");
    if let Some((name, _)) = labels {
        header.push(',');
        header.push_str(name);
    }
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for i in 0..data.n() {
        let mut line = data
            .row(i)
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(",");
        if let Some((_, l)) = labels {
            line.push_str(if l[i] { ",1" } else { ",0" });
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population (1/n) standard deviation.
pub(crate) fn population_std(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Spread below which a column is treated as constant.
pub(crate) const ZERO_VARIANCE: f64 = 1e-12;

/// z-score normalization with population std. A constant column maps to zeros.
pub fn normalize_feature(column: &[f64]) -> Vec<f64> {
    if column.is_empty() {
        return Vec::new();
    }
    let mu = mean(column);
    let sd = population_std(column);
    if sd <= ZERO_VARIANCE * mu.abs().max(1.0) {
        return vec![0.0; column.len()];
    }
    column.iter().map(|x| (x - mu) / sd).collect()
}

/// Labeled data with far-displaced outliers: `n - n_outliers` standard normal
/// inliers in `d` dimensions, plus `n_outliers` points placed `sigma_mult`
/// standard deviations from the origin along random directions. The outliers
/// are the last rows.
///
/// Directions are kept at least 60 degrees apart where the dimension allows,
/// so no two outliers sit closer to each other than to the origin and none
/// lands in another's neighborhood. Past 2000 attempts the angle requirement
/// is halved.
pub fn planted_outlier_suite(
    n: usize,
    d: usize,
    n_outliers: usize,
    sigma_mult: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_outliers == 0 || n_outliers >= n || d == 0 {
        return Err(Error::Parameter(format!(
            "bad planted suite shape n={n}, d={d}, outliers={n_outliers}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..(n - n_outliers) {
        rows.push((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    }
    rows.extend(separated_directions(&mut rng, d, n_outliers).into_iter().map(|u| {
        u.into_iter().map(|x| sigma_mult * x).collect::<Vec<f64>>()
    }));
    let mut labels = vec![false; n - n_outliers];
    labels.extend(std::iter::repeat_n(true, n_outliers));
    LabeledDataset::new(DataMatrix::from_rows(&rows)?, labels)
}

fn separated_directions(rng: &mut ChaCha8Rng, d: usize, count: usize) -> Vec<Vec<f64>> {
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / norm).collect()
    };
    let mut max_cos = 0.5;
    loop {
        for _ in 0..2000 {
            let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
            for _ in 0..count {
                let u = unit(rng);
                if dirs.iter().all(|w| w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() <= max_cos) {
                    dirs.push(u);
                } else {
                    break;
                }
            }
            if dirs.len() == count || d == 1 {
                dirs.resize_with(count, || unit(rng));
                return dirs;
            }
        }
        max_cos = (1.0 + max_cos) / 2.0;
    }
}

/// Shape knobs of the synthetic corpus generator.
#[derive(Debug, Clone)]
pub struct CorpusShape {
    pub n_range: (usize, usize),
    pub m_range: (usize, usize),
    pub outlier_ratio: (f64, f64),
}

impl CorpusShape {
    pub fn validate(&self) -> Result<()> {
        let (n0, n1) = self.n_range;
        let (m0, m1) = self.m_range;
        let (r0, r1) = self.outlier_ratio;
        if n0 < 10 || n0 > n1 {
            return Err(Error::Parameter(format!("row range {n0}..={n1} must satisfy 10 <= min <= max")));
        }
        if m0 < 2 || m0 > m1 {
            return Err(Error::Parameter(format!("column range {m0}..={m1} must satisfy 2 <= min <= max")));
        }
        if !(r0 > 0.0 && r0 <= r1 && r1 < 0.5) {
            return Err(Error::Parameter(format!("outlier ratio {r0}..={r1} must lie in (0, 0.5)")));
        }
        Ok(())
    }
}

impl Default for CorpusShape {
    fn default() -> Self {
        Self {
            n_range: (100, 500),
            m_range: (4, 30),
            outlier_ratio: (0.02, 0.25),
        }
    }
}

/// Generates `count` labeled datasets with the default shape.
pub fn generate_synthetic_corpus(count: usize, rng_seed: u64) -> Vec<LabeledDataset> {
    generate_corpus_with(count, rng_seed, &CorpusShape::default()).expect("default shape is valid")
}

/// Each dataset: inliers from a random Gaussian mixture (1 to 3 components),
/// a fraction of the columns made redundant as noisy linear copies of other
/// columns, and outliers drawn uniformly from the inlier bounding box inflated
/// by half its width on every side. Outliers are displaced only on a random
/// subset of the base columns and look like inliers elsewhere, so some
/// feature subspaces expose them and some do not.
pub fn generate_corpus_with(count: usize, rng_seed: u64, shape: &CorpusShape) -> Result<Vec<LabeledDataset>> {
    shape.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok((0..count)
        .map(|_| {
            let seed = master.random::<u64>();
            synthetic_dataset(&mut ChaCha8Rng::seed_from_u64(seed), shape)
        })
        .collect())
}

fn synthetic_dataset(rng: &mut ChaCha8Rng, shape: &CorpusShape) -> LabeledDataset {
    let n = rng.random_range(shape.n_range.0..=shape.n_range.1);
    let m = rng.random_range(shape.m_range.0..=shape.m_range.1);
    let ratio = rng.random_range(shape.outlier_ratio.0..=shape.outlier_ratio.1);
    let n_out = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let n_in = n - n_out;

    // Up to a quarter of the columns are redundant copies; at least 2 base columns.
    let n_redundant = rng.random_range(0..=m / 4).min(m.saturating_sub(2));
    let base = m - n_redundant;

    let n_clusters = rng.random_range(1..=3usize);
    let centers: Vec<Vec<f64>> = (0..n_clusters)
        .map(|_| (0..base).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let spreads: Vec<Vec<f64>> = (0..n_clusters)
        .map(|_| (0..base).map(|_| rng.random_range(0.5..1.5)).collect())
        .collect();
    let draw_inlier = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let c = rng.random_range(0..n_clusters);
        (0..base)
            .map(|j| centers[c][j] + spreads[c][j] * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let mut rows: Vec<Vec<f64>> = (0..n_in).map(|_| draw_inlier(rng)).collect();

    let mut lo = vec![f64::INFINITY; base];
    let mut hi = vec![f64::NEG_INFINITY; base];
    for r in &rows {
        for j in 0..base {
            lo[j] = lo[j].min(r[j]);
            hi[j] = hi[j].max(r[j]);
        }
    }
    let n_relevant = rng.random_range(1..=base.div_ceil(2).max(1));
    let mut relevant: Vec<usize> = (0..base).collect();
    for i in 0..n_relevant {
        let k = rng.random_range(i..base);
        relevant.swap(i, k);
    }
    relevant.truncate(n_relevant);

    for _ in 0..n_out {
        let mut p = draw_inlier(rng);
        for &j in &relevant {
            let w = hi[j] - lo[j];
            p[j] = rng.random_range((lo[j] - 0.5 * w)..(hi[j] + 0.5 * w));
        }
        rows.push(p);
    }

    for _ in 0..n_redundant {
        let src = rng.random_range(0..base);
        let scale = rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        for r in rows.iter_mut() {
            let noise = 0.01 * rng.sample::<f64, _>(StandardNormal);
            let v = scale * r[src] + noise;
            r.push(v);
        }
    }

    // Shuffle so outliers are not clustered at the end.
    let mut labels: Vec<bool> = (0..n).map(|i| i >= n_in).collect();
    for i in (1..n).rev() {
        let k = rng.random_range(0..=i);
        rows.swap(i, k);
        labels.swap(i, k);
    }

    let data = DataMatrix::from_rows(&rows).expect("generator produces a valid matrix");
    LabeledDataset::new(data, labels).expect("generator plants at least one outlier")
}
