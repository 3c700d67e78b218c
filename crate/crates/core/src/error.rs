use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The iterate left the representable range; the run is not usable.
    #[error("divergence at step {step}: state norm exceeded {threshold:e} or became non-finite")]
    Divergence { step: u64, threshold: f64 },

    #[error("{diverged} of {total} replicas diverged (tolerance {tolerance})")]
    TooManyDivergent {
        diverged: usize,
        total: usize,
        tolerance: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::TooManyDivergent { .. })
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidPotential(_)
                | Error::InvalidSchedule(_)
                | Error::InvalidArgument(_)
                | Error::Precondition(_)
        )
    }
}
