use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PamError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("quadrature did not reach tolerance {requested:.3e} (achieved error estimate {achieved:.3e}, value {value:.6e})")]
    Quadrature {
        requested: f64,
        achieved: f64,
        value: f64,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("solver instability at t = {time}: V-norm {norm:.3e} exceeds {threshold:.1e}")]
    Unstable {
        time: f64,
        norm: f64,
        threshold: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(String),
}

impl PamError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        PamError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for PamError {
    fn from(e: std::io::Error) -> Self {
        PamError::Io(e.to_string())
    }
}

impl From<csv::Error> for PamError {
    fn from(e: csv::Error) -> Self {
        PamError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PamError>;
