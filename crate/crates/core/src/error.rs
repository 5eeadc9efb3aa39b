use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the library.
///
/// Each variant maps onto one of three broad classes (configuration, data,
/// numerical) which the CLI turns into process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("column `{0}` appears more than once")]
    DuplicateColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a finite number")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("machine `{label}` produced a non-finite prediction at row {row}")]
    NonFinitePrediction { label: String, row: usize },

    #[error("elastic net did not converge after {sweeps} sweeps (last max update {last_change:e})")]
    NotConverged { sweeps: usize, last_change: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("serialization error: {0}")]
    Serde(String),

    #[error("replication {replication} failed at stage `{stage}` (seed {seed}): {source}")]
    Replication {
        replication: usize,
        stage: &'static str,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// Process exit code for this error: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 2,
            Error::Io { .. }
            | Error::Csv { .. }
            | Error::MissingColumn(_)
            | Error::DuplicateColumn(_)
            | Error::BadCell { .. }
            | Error::ShapeMismatch(_)
            | Error::Serde(_) => 3,
            Error::NonFinite { .. }
            | Error::NonFinitePrediction { .. }
            | Error::NotConverged { .. }
            | Error::Numerical(_) => 4,
            Error::Replication { source, .. } => source.exit_code(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
