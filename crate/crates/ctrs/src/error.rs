use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ctrs_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for invalid input, 3 for a missing artifact, 4 for a numerical failure.
    pub fn exit_code(&self) -> i32 {
        use ctrs_core::Error as C;
        match self {
            Error::Core(C::MissingModel(_)) => 3,
            Error::Core(C::Numerical(_) | C::NonFinite(_)) => 4,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
            _ => 2,
        }
    }
}
