//! Error types shared across the simulator.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or malformed config input.
    #[error("configuration error: {0}")]
    Config(String),

    /// A data partition could not satisfy its contract.
    #[error("partition error: {0}")]
    Partition(String),

    /// An operation was called with inputs violating its contract
    /// (shape mismatch, non-unit vector, empty set, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numeric quantity became non-finite during computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code category for the CLI: 2 = config/contract,
    /// 3 = numeric, 4 = i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Partition(_) | Error::Contract(_) => 2,
            Error::Numeric(_) => 3,
            Error::Io(_) => 4,
        }
    }
}
