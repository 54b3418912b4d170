//! Budgeted outlier exploration: enumerate detector candidates over feature
//! subspaces, select a cost-feasible diverse subset, execute it and factorize
//! the resulting score matrix into perspectives.

pub mod data;
pub mod detectors;
pub mod error;
pub mod meta;
pub mod metrics;
pub mod mip;
mod neighbors;
pub mod perspectives;
pub mod pipeline;
pub mod server;
mod serde_util;
pub mod subspace;

pub use data::{load_csv, DataMatrix, FeatureSubspace, LabeledDataset};
pub use detectors::{Algorithm, DetectorParams, DetectorResult};
pub use error::{Error, Result};
pub use pipeline::{run_exploration, Home, RunConfig, RunResult, RunStatus, Strategy};
