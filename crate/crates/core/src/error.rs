use thiserror::Error;

/// Errors produced by model construction, rollouts, value estimation and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The integrated state left the space of finite numbers. `sample` is set
    /// when the blow-up happened inside a multi-sample value evaluation.
    #[error("non-finite state at step {step}{}", sample.map(|i| format!(" (disturbance sample {i})")).unwrap_or_default())]
    NonFiniteState { step: usize, sample: Option<usize> },

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
