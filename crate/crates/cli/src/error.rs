use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("numerical failure: {0}")]
    Numerical(i2c_core::Error),

    #[error("divergence during evaluation: {0}")]
    Divergence(i2c_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Read { .. } => 2,
            CliError::Numerical(_) | CliError::Write { .. } => 3,
            CliError::Divergence(_) => 4,
        }
    }

    pub(crate) fn config(msg: impl std::fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
