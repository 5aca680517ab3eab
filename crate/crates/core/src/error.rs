use thiserror::Error;

/// Errors raised by the evaluation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside its admissible range or has the wrong shape.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The problem instance lacks a structural property an operation needs
    /// (irreducibility, full column rank, a nonsingular system, ...).
    #[error("structural failure: {0}")]
    Structural(String),

    /// A learner produced NaN or an infinite entry.
    #[error("non-finite state at step {step}: {what}")]
    NonFinite { step: u64, what: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

pub(crate) fn structural<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Structural(msg.into()))
}
