use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("field is singular at t = {t}, x = {x:?}")]
    Singular { t: f64, x: Vec<f64> },

    #[error("field returned a non-finite value for {quantity} at t = {t}, x = {x:?}")]
    NonFinite {
        quantity: &'static str,
        t: f64,
        x: Vec<f64>,
    },

    #[error("field defect: {0}")]
    FieldDefect(String),

    #[error("quadrature failure: {hits} of {total} sample points hit the singular set")]
    Quadrature { hits: usize, total: usize },

    #[error("path {path} blew up at step {step}")]
    BlowUp { path: usize, step: usize },

    #[error("sigma is not invertible along path {path} at step {step}")]
    SigmaInversion { path: usize, step: usize },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("ill-conditioned regression (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("mismatched ensembles: {0}")]
    Mismatch(String),

    #[error("malformed file {path:?}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("suite validation failed: {0}")]
    Suite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
