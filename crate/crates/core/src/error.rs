use thiserror::Error;

use crate::solver::TraceRow;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing configuration key `{0}`")]
    MissingKey(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("fit diverged at iteration {iteration}: {reason}")]
    FitDiverged {
        iteration: usize,
        reason: String,
        traces: Vec<TraceRow>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 usage/config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::MissingKey(_)
            | Error::DimensionMismatch { .. }
            | Error::Parse { .. }
            | Error::InsufficientData(_)
            | Error::Usage(_)
            | Error::Unsupported(_)
            | Error::Json(_) => 2,
            Error::Divergence { .. } | Error::Numerical(_) | Error::FitDiverged { .. } => 3,
            Error::Io(_) | Error::Csv(_) => 4,
        }
    }
}
