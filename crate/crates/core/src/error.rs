use thiserror::Error;

use crate::env::EpisodeOutcome;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("gain `{name}` = {value} outside its range [{lo}, {hi}]")]
    GainOutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("integration produced a non-finite state")]
    NonFiniteState,

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("environment was stepped after terminating with {0:?}; call reset first")]
    EpisodeTerminated(EpisodeOutcome),

    #[error("environment was stepped before reset")]
    NotReset,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("episode on `{trajectory}` aborted at t = {t:.3} s: {reason}")]
    EpisodeAborted {
        trajectory: String,
        t: f64,
        reason: String,
    },

    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
