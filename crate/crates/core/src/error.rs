use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate. Every variant maps onto one of three
/// process exit categories (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported task: {0}")]
    UnsupportedTask(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 = configuration, 2 = data, 3 = numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::UnsupportedTask(_) => 1,
            Error::Data(_) | Error::Parse { .. } | Error::Shape(_) | Error::Io { .. } => 2,
            Error::Numeric(_) | Error::UndefinedMetric(_) | Error::Rank(_) => 3,
        }
    }
}
