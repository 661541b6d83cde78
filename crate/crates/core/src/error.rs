use thiserror::Error;

/// Errors produced by the readout toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("degenerate boundary calibration: L0={l0} must exceed L1={l1}")]
    DegenerateBoundary { l0: f64, l1: f64 },

    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),

    #[error("training diverged at iteration {iteration} ({reason}); use a smaller learning rate")]
    Divergence { iteration: usize, reason: String },

    #[error("sinusoid fit failed: {0}")]
    FitFailure(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            field,
            reason: reason.into(),
        }
    }
}
