use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by every module of the crate.
///
/// The variants map one-to-one onto the process exit codes used by the CLI
/// and the FFI error codes, see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("state error: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),

    #[error("image decode error at {path}: {message}")]
    Decode { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::State(_) => "state",
            Error::Format(_) => "format",
            Error::Numerical(_) => "numerical",
            Error::Io { .. } | Error::MissingFiles(_) | Error::Decode { .. } => "io",
        }
    }

    /// 2 config/validation, 3 I/O, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::State(_) | Error::Format(_) => 2,
            Error::Io { .. } | Error::MissingFiles(_) | Error::Decode { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($arg)+)));
        }
    };
}

pub(crate) use ensure;
