use thiserror::Error;

/// Errors raised by the solver suite.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text; `line` is 1-based.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),
    /// A problem or option set violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Least-squares fit could not be computed.
    #[error("regression failed: {0}")]
    Regression(String),
    /// The request exceeds what a brute-force routine will attempt.
    #[error("refused: {0}")]
    Refused(String),
    #[error("node {0} is already augmented")]
    AlreadyAugmented(usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
