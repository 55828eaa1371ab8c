use thiserror::Error;

/// Errors raised by the model, training, and experiment layers.
#[derive(Debug, Error)]
pub enum RmnError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient entry for parameter `{param}` (value {value})")]
    NonFiniteGradient { param: String, value: f64 },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown benchmark `{name}`; valid names: {valid}")]
    UnknownBenchmark { name: String, valid: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, RmnError>;

pub(crate) fn contract(msg: impl Into<String>) -> RmnError {
    RmnError::Contract(msg.into())
}
