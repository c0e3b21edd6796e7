use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mass {mass:e} exceeds the configured ceiling {ceiling:e}")]
    Overflow { mass: f64, ceiling: f64 },

    /// The travel time from 0 is infinite (the flow cannot leave 0).
    #[error("integral of 1/tau diverges near 0 (exponent {exponent} at zero)")]
    Divergent { exponent: f64 },

    #[error("moment M_{r} is infinite for this profile")]
    InfiniteMoment { r: f64 },

    #[error("operation requires a self-similar kernel")]
    NotSelfSimilar,

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("no bracket for the Malthus exponent: L(q) < 1 over the probed range [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("restricted operator is reducible: {0}")]
    Reducible(String),

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
