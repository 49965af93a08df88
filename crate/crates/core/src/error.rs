use thiserror::Error;

/// Errors raised by the sensing workbench.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("index {index} out of range (limit {limit})")]
    Index { index: usize, limit: usize },

    /// The probability of an observed outcome is too small for a log-gradient.
    #[error("degenerate gradient: p(outcome {outcome}) = {probability:e}")]
    DegenerateGradient { outcome: usize, probability: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
