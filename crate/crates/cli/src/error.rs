use std::path::PathBuf;

use thiserror::Error;

use crate::config::Origin;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{origin}: {message}")]
    Parse { origin: Origin, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: fedsim_core::Error,
    },
}

impl CliError {
    pub fn parse(origin: Origin, message: impl Into<String>) -> Self {
        CliError::Parse {
            origin,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn core(context: impl Into<String>, source: fedsim_core::Error) -> Self {
        CliError::Core {
            context: context.into(),
            source,
        }
    }

    /// 2 for bad input, 3 for a numerically aborted run, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Config(_) => 2,
            CliError::Core { source, .. } => match source {
                fedsim_core::Error::NonFinite { .. } => 3,
                fedsim_core::Error::Config(_) | fedsim_core::Error::Sizing { .. } => 2,
                _ => 1,
            },
            CliError::Io { .. } | CliError::Csv(_) => 1,
        }
    }
}
