use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("corrupt archive: {0}")]
    Corruption(String),

    #[error("unsupported schema version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image decode error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable, lower-case tag used on the wire and for exit-code mapping.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Validation(_) => ErrorKind::Validation,
            Error::Config(_) => ErrorKind::Config,
            Error::Infeasible(_) => ErrorKind::Infeasible,
            Error::Corruption(_) => ErrorKind::Corruption,
            Error::Version { .. } => ErrorKind::Version,
            Error::NonFinite(_) => ErrorKind::NonFinite,
            Error::Io { .. } | Error::Image { .. } => ErrorKind::Io,
            Error::Json(_) => ErrorKind::Corruption,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Config,
    Infeasible,
    Corruption,
    Version,
    NonFinite,
    Io,
    Internal,
}

impl ErrorKind {
    /// Process exit code: 1 for bad input, 2 for runtime failures.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation | ErrorKind::Config | ErrorKind::Infeasible => 1,
            _ => 2,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
