use thiserror::Error;

/// Errors produced by the numerical layers and the front end.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An expectation (integral or sum) is infinite or failed to converge.
    #[error("expectation diverges: {0}")]
    Divergent(String),

    /// A monotone inversion could not bracket the target value.
    #[error("target value {target} not reachable from x = {x_lo}")]
    NotBracketed { target: f64, x_lo: f64 },

    /// A supremum grows without bound at the edge of the search grid.
    #[error("supremum is unbounded: {0}")]
    Unbounded(String),

    /// An argument lies outside the range where an operation is defined.
    #[error("domain error: {0}")]
    DomainError(String),

    /// Bound curves do not line up with the verification grid.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A distribution failed its construction invariants.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// A configuration string, flag or file entry could not be parsed.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
