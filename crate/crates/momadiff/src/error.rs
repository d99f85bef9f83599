use std::path::PathBuf;

/// Errors from file handling, configuration and the command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] momadiff_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{path}: format version {found} is not supported (expected {expected})", path = path.display())]
    Version { path: PathBuf, expected: u32, found: u32 },
    #[error("config: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("internal: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 1 for problems with the user's inputs, 2 for failures of the tool itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Internal(_) | Error::Core(momadiff_core::Error::NonFinite(_)) => 2,
            _ => 1,
        }
    }

    /// Short machine-parseable category for the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(_) => "invalid-input",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Version { .. } => "version",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Internal(_) => "internal",
        }
    }
}
