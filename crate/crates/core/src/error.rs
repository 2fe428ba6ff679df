use thiserror::Error;

/// Errors raised by the kernel engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NtkError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("variance diverges: {0}")]
    Divergence(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid row {row}: {msg}")]
    InvalidRow { row: usize, msg: String },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

impl NtkError {
    /// Coarse class used for process exit codes.
    pub fn class(&self) -> ErrorClass {
        match self {
            NtkError::InvalidArgument(_)
            | NtkError::Unsupported(_)
            | NtkError::InvalidDataset(_)
            | NtkError::InvalidRow { .. }
            | NtkError::Parse { .. }
            | NtkError::AssumptionViolated(_)
            | NtkError::Resolution(_) => ErrorClass::Config,
            NtkError::Numeric(_)
            | NtkError::Divergence(_)
            | NtkError::Convergence(_)
            | NtkError::NoSolution(_)
            | NtkError::Singular(_) => ErrorClass::Numeric,
            NtkError::Io(_) => ErrorClass::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Io,
}

impl From<std::io::Error> for NtkError {
    fn from(e: std::io::Error) -> Self {
        NtkError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NtkError>;
