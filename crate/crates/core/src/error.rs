use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("distribution has no entries")]
    Empty,

    #[error("invalid probability {value} at index {index}")]
    InvalidEntry { index: usize, value: f64 },

    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("residual is undefined: the two distributions coincide")]
    ZeroResidual,

    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{size} entries exceed the enumeration cap of {cap}")]
    TooLarge { size: u128, cap: u128 },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("rejection branch is unreachable: acceptance is certain")]
    DegenerateRejection,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical guard violated: {0}")]
    NumericalGuard(String),
}

pub type Result<T> = std::result::Result<T, Error>;
