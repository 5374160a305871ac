use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input file.
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A check ran to completion and failed (audit threshold, divergence).
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) | CliError::Io { .. } => 2,
        }
    }
}

impl From<caref_core::Error> for CliError {
    fn from(e: caref_core::Error) -> Self {
        match e {
            caref_core::Error::Diverged { .. } => CliError::Check(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
