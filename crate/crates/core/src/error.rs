use thiserror::Error;

use crate::sampler::ChainSamples;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spline order: need at least 4 basis functions, got {0}")]
    InvalidOrder(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(
        "matrix of size {size} is not positive definite after jitter {jitter:e} \
         (min diag {min_diag:e}, max |offdiag| {max_offdiag:e})"
    )]
    NotPositiveDefinite {
        size: usize,
        jitter: f64,
        min_diag: f64,
        max_offdiag: f64,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("chain diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        partial: Box<ChainSamples>,
    },

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in CLI error payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidOrder(_) => "invalid_order",
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Dimension(_) => "dimension",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::Numerical(_) => "numerical",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Diverged { .. } => "diverged",
            Error::Ingest(_) => "ingest",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
