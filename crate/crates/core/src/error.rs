use thiserror::Error;

pub type Result<T, E = HstError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HstError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("duplicate entry: {0}")]
    Duplicate(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no contrastive signal: every (frame, layer) term was skipped")]
    NoSignal,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("brute-force oracle too large: {0} paths exceed the limit")]
    OracleTooLarge(u128),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HstError {
    /// Whether the error stems from invalid user input rather than a failure
    /// while processing valid input.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            HstError::Io(_) | HstError::NoSignal | HstError::OracleTooLarge(_) | HstError::Diverged { .. }
        )
    }
}
