use std::fmt;
use std::io;

/// Errors raised by the library.
///
/// `Config` covers bad user-supplied parameters (usage-level problems),
/// the rest are data problems.
#[derive(Debug)]
pub enum Error {
    InvalidArgument(String),
    DimensionMismatch { expected: usize, found: usize },
    Degenerate(String),
    Config(String),
    Schema(String),
    Io { path: String, source: io::Error },
    Json(serde_json::Error),
    Csv(csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by the caller's configuration rather than by
    /// the data being processed.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::Degenerate(msg) => write!(f, "degenerate input: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Schema(msg) => write!(f, "schema error: {msg}"),
            Error::Io { path, source } => write!(f, "{path}: {source}"),
            Error::Json(e) => write!(f, "json: {e}"),
            Error::Csv(e) => write!(f, "csv: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Json(e) => Some(e),
            Error::Csv(e) => Some(e),
            _ => None,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e)
    }
}
