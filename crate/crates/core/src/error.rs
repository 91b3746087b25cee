use thiserror::Error;

/// Errors raised by the pricing and replication engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    /// Scenario or argument failed validation. Each entry names the offending field.
    #[error("invalid scenario: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An integrand produced a NaN or infinity at a quadrature node or sample.
    #[error("non-finite value while evaluating {0}")]
    NonFinite(String),

    #[error("no sign change of the price equation after {doublings} bracket doublings")]
    BracketNotFound { doublings: usize },

    #[error("price equation has {} roots: {roots:?}", .roots.len())]
    NonUniqueRoot { roots: Vec<f64> },

    /// The volatility matrix is numerically singular: the market is incomplete
    /// with respect to the price process at this state.
    #[error("market numerically incomplete at state t={t}, b={b:?} (min singular value {min_sv:e}, {paths} path(s) affected)")]
    IncompleteMarket {
        t: f64,
        b: Vec<f64>,
        min_sv: f64,
        paths: usize,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),
}

impl EngineError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EngineError::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;
