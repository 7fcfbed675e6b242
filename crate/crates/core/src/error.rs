//! Crate-wide error type.

/// Errors surfaced by the pipeline. Variants are grouped so callers (the CLI
/// in particular) can map them to data-vs-numeric exit classes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate weights: all non-similarity weights are zero")]
    DegenerateWeights,

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("topic classification failed: {0}")]
    Classification(String),

    #[error("out-of-vocabulary token: {0}")]
    OutOfVocab(String),

    #[error("training stage violation: {0}")]
    StageOrder(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of numerical computation (as opposed to bad data,
    /// IO, or contract violations).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
