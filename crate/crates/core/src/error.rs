use thiserror::Error;

/// Errors raised by estimators, closed forms, tests and the trainer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Shapes or parameters that can never be valid together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Data that violates a documented input contract.
    #[error("input error: {0}")]
    Input(String),

    /// A matrix that was required to be symmetric positive definite failed Cholesky.
    #[error("input error: {which} is not positive definite (Cholesky failed)")]
    NotPositiveDefinite { which: String },

    /// Regularized Gram solves broke down (conditional MMD).
    #[error("numerical-instability: {0}")]
    NumericalInstability(String),

    /// A caller-side precondition was not met.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Training produced a non-finite loss; the offending step is named.
    #[error("non-finite loss in {step}: {detail}")]
    NonFiniteLoss { step: String, detail: String },
}

impl Error {
    /// True for failures caused by floating-point breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericalInstability(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
