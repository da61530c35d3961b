use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum AmfError {
    /// A parameter or configuration value is out of its valid range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Inputs have inconsistent shapes.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A solver returned something that is not a probability vector.
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    /// The adversary played outside its declared action set.
    #[error("adversary action outside its action set: {0}")]
    AdversaryOutOfSet(String),

    /// A loss evaluation violated the declared bound or length.
    #[error("invalid loss vector: {0}")]
    InvalidLoss(String),

    /// A runtime precondition of an instance was violated
    /// (e.g. regret to an unavailable action).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A linear program was infeasible where feasibility was expected.
    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    /// Numerical failure inside a solver; never expected on valid input.
    #[error("internal solver error: {0}")]
    Internal(String),

    /// A per-round certificate check failed.
    #[error("certification failed: {0}")]
    Certification(String),

    /// Trace data ran out before the horizon.
    #[error("trace exhausted at round {round} (trace has {len} rows)")]
    TraceExhausted { round: usize, len: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AmfError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AmfError::Config(msg.into()))
}
