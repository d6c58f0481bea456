use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the compression pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// Inputs are individually valid but do not fit together (plan vs arch vs checkpoint).
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("internal error: {0}")]
    Internal(String),
    /// A check ran to completion but its result exceeded the requested tolerance.
    #[error("tolerance exceeded: {0}")]
    Tolerance(String),
}

/// Coarse error classes used for reporting and process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Argument,
    Config,
    Mismatch,
    Io,
    Data,
    Numeric,
    Internal,
    Tolerance,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Argument => "argument",
            ErrorCategory::Config => "config",
            ErrorCategory::Mismatch => "mismatch",
            ErrorCategory::Io => "io",
            ErrorCategory::Data => "data",
            ErrorCategory::Numeric => "numeric",
            ErrorCategory::Internal => "internal",
            ErrorCategory::Tolerance => "tolerance",
        }
    }

    /// Process exit status: 1 validation, 2 I/O or data, 3 numeric or internal.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Argument
            | ErrorCategory::Config
            | ErrorCategory::Mismatch
            | ErrorCategory::Tolerance => 1,
            ErrorCategory::Io | ErrorCategory::Data => 2,
            ErrorCategory::Numeric | ErrorCategory::Internal => 3,
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Argument(_) => ErrorCategory::Argument,
            Error::Config(_) => ErrorCategory::Config,
            Error::Mismatch(_) => ErrorCategory::Mismatch,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Data(_) => ErrorCategory::Data,
            Error::Numeric(_) => ErrorCategory::Numeric,
            Error::Internal(_) => ErrorCategory::Internal,
            Error::Tolerance(_) => ErrorCategory::Tolerance,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}
pub(crate) use bail;
