#![allow(dead_code)]

use std::path::Path;

use perspex_core::data::{planted_outlier_suite, write_csv};
use perspex_core::detectors::Algorithm;
use perspex_core::meta::{ModelBundle, ModelKind, RegressionModel, COST_FEATURES, COST_FEATURE_ORDER, META_FEATURES, META_FEATURE_ORDER};
use tempfile::TempDir;

/// Fixed-cost, fixed-utility models: cheap to build and predictable.
pub fn toy_bundle() -> ModelBundle {
    let mut models = Vec::new();
    for a in Algorithm::ALL {
        models.push(RegressionModel {
            algorithm: a,
            kind: ModelKind::Cost,
            feature_order: COST_FEATURE_ORDER.into(),
            coefficients: vec![0.0; COST_FEATURES],
            intercept: 1e-3 * (1 + a.index()) as f64,
            training_r2: 1.0,
        });
        models.push(RegressionModel {
            algorithm: a,
            kind: ModelKind::Utility,
            feature_order: META_FEATURE_ORDER.into(),
            coefficients: vec![0.0; META_FEATURES],
            intercept: 0.5 + 0.05 * a.index() as f64,
            training_r2: 1.0,
        });
    }
    ModelBundle::new(models).expect("toy bundle is valid")
}

/// Writes a labeled planted-outlier dataset as CSV.
pub fn write_planted(path: &Path, n: usize, seed: u64) {
    let suite = planted_outlier_suite(n, 4, 4, 10.0, seed).expect("valid suite");
    write_csv(path, &suite.data, Some(("label", &suite.labels))).expect("csv written");
}

/// A home directory with `datasets/planted.csv` and `models/bundle.json`.
pub fn home() -> TempDir {
    let dir = tempfile::tempdir().expect("temp dir");
    std::fs::create_dir_all(dir.path().join("datasets")).unwrap();
    std::fs::create_dir_all(dir.path().join("models")).unwrap();
    write_planted(&dir.path().join("datasets/planted.csv"), 120, 1);
    toy_bundle().save(dir.path().join("models/bundle.json")).unwrap();
    dir
}
