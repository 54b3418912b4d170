use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed cell at row {row}, column {column} ({name}): {value:?}")]
    MalformedCell {
        /// 1-based data row (the header is row 0).
        row: usize,
        column: usize,
        name: String,
        value: String,
    },

    #[error("invalid label at row {row}: {value:?} (expected 0 or 1)")]
    Label { row: usize, value: String },

    #[error("size error: {0}")]
    Size(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("rank error: g = {g} exceeds min(t, n) = {max}")]
    Rank { g: usize, max: usize },

    #[error("training error: {0}")]
    Training(String),

    #[error("dimension mismatch: expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("infeasible exploration budget: {0}")]
    Infeasible(String),

    #[error("detector {detector} failed: {source}")]
    Detector {
        detector: String,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("not found: {0}")]
    NotFound(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI and HTTP error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedCell { .. } => "malformed_cell",
            Error::Label { .. } => "label",
            Error::Size(_) => "size",
            Error::Parameter(_) => "parameter",
            Error::Shape(_) => "shape",
            Error::Rank { .. } => "rank",
            Error::Training(_) => "training",
            Error::Dimension { .. } => "dimension",
            Error::Infeasible(_) => "infeasible",
            Error::Detector { .. } => "detector",
            Error::Serde(_) => "serialization",
            Error::Csv(_) => "csv",
            Error::NotFound(_) => "not_found",
        }
    }
}
