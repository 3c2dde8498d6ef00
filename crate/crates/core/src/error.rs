use thiserror::Error;

/// Errors raised by the simulation core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown register {0:?}")]
    UnknownRegister(String),
    #[error("register {0:?} already exists")]
    DuplicateRegister(String),
    #[error("register {0:?} is sealed inside a black-box prover")]
    Sealed(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("operator is not unitary (deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("invalid POVM: {0}")]
    InvalidPovm(String),
    #[error("state too large: {0}")]
    TooLarge(String),
    #[error("invalid machine: {0}")]
    InvalidMachine(String),
    #[error("invalid secret: {0}")]
    InvalidSecret(String),
    #[error("linearly dependent basis")]
    DependentBasis,
    #[error("isometry check failed (deviation {0:.3e})")]
    NotIsometry(f64),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
