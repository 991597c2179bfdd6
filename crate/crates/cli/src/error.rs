use std::io;

use thiserror::Error;

/// Driver failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] duu_core::Error),

    #[error("output error: {0}")]
    Io(#[from] io::Error),

    #[error("output error: {0}")]
    Csv(#[from] csv::Error),

    #[error("optimizer did not converge: {0}")]
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NotConverged(_) | CliError::Core(duu_core::Error::Convergence(_)) => 4,
            _ => 3,
        }
    }
}
