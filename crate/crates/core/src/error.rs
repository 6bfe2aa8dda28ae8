use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the simulator can report.
///
/// Variants are grouped by the exit-code class the CLI maps them to
/// (see [`Error::class`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in `{tensor}`: expected {expected}, found {found}")]
    Dimension {
        tensor: String,
        expected: String,
        found: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("value {value} out of range for {what} (limit ±{limit})")]
    Range { what: String, value: i64, limit: i64 },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("scheduling error: {0}")]
    Scheduling(String),

    #[error("capacity error in {what}: required {required}, available {available}")]
    Capacity {
        what: String,
        required: u64,
        available: u64,
    },

    #[error("layout error: {0}")]
    Layout(String),

    #[error("accounting error: {0}")]
    Accounting(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Config, schema, dimension, layout and accounting problems.
    Config,
    Capacity,
    Numeric,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Io => 1,
            ErrorClass::Config => 2,
            ErrorClass::Capacity => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Dimension { .. }
            | Error::Schema(_)
            | Error::Data(_)
            | Error::Config(_)
            | Error::Scheduling(_)
            | Error::Layout(_)
            | Error::Accounting(_)
            | Error::Json { .. } => ErrorClass::Config,
            Error::Capacity { .. } => ErrorClass::Capacity,
            Error::Range { .. } | Error::Encoding(_) | Error::Numeric(_) => ErrorClass::Numeric,
            Error::Io { .. } => ErrorClass::Io,
        }
    }

    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Schema(_) => "schema",
            Error::Data(_) => "data",
            Error::Config(_) => "config",
            Error::Range { .. } => "range",
            Error::Encoding(_) => "encoding",
            Error::Numeric(_) => "numeric",
            Error::Scheduling(_) => "scheduling",
            Error::Capacity { .. } => "capacity",
            Error::Layout(_) => "layout",
            Error::Accounting(_) => "accounting",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn dim(tensor: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            tensor: tensor.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
