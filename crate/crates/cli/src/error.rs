use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The config could not be read, parsed or resolved.
    #[error("config error: {0}")]
    Config(String),
    #[error("config error at `{path}` (line {line}): {message}")]
    ConfigKey { path: String, line: usize, message: String },
    /// A run finished but its outcome is an error, e.g. failed sweep cells.
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] ovanet_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit status: 1 for config problems, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::ConfigKey { .. } => 1,
            CliError::Core(ovanet_core::Error::InvalidArgument(_))
            | CliError::Core(ovanet_core::Error::UnsupportedConfiguration(_)) => 1,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
