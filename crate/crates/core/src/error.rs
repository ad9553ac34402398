//! Error type shared by all engine modules.

/// Errors produced by the engine.
///
/// The variants map onto the harness exit-code classes: `InvalidInput` is a
/// validation failure, `ToleranceNotMet` and `ConvergenceFailure` are
/// convergence problems, and `EstimateViolation` means a verified bound was
/// broken beyond its stated tolerance.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("tolerance not met in {context}: achieved {achieved:.3e}, required {required:.3e}")]
    ToleranceNotMet {
        context: String,
        achieved: f64,
        required: f64,
    },

    #[error("convergence failure: {0}")]
    ConvergenceFailure(String),

    #[error("estimate violation: {0}")]
    EstimateViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
