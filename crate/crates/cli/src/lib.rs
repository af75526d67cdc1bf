//! Library side of the `secleak` command-line tool: configuration loading,
//! report rendering, and the command implementations.

pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    VerificationFailed(String),
}

impl CliError {
    /// 1 for usage, config and I/O errors, 2 for non-convergence,
    /// 3 for failed verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::NotConverged(_) => 2,
            CliError::VerificationFailed(_) => 3,
        }
    }
}
