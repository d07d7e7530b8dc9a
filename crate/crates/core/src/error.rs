use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong between loading a table and writing a report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("ragged input: row {row} has {found} fields, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("cannot parse {value:?} at row {row}, column {col}")]
    Parse { row: usize, col: usize, value: String },

    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("column {0} has no observed entries")]
    FullyMissingColumn(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("score training diverged at epoch {epoch} (loss = {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("particle state became non-finite at euler step {step}")]
    EulerBlowup { step: usize },

    #[error("no missing entries to evaluate")]
    NoMissing,

    #[error("ground truth is required but absent")]
    TruthAbsent,

    #[error("sinkhorn did not converge in {iterations} iterations (marginal error {violation:e})")]
    SinkhornNoConvergence { iterations: usize, violation: f64 },

    #[error("mask simulation failed: {0}")]
    Simulation(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("seed {seed} failed")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
