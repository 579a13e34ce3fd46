use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("index ({i}, {j}) outside a {nx}x{ny} grid")]
    IndexOutOfRange { i: usize, j: usize, nx: usize, ny: usize },

    #[error("flat index {m} outside 1..={len}")]
    FlatIndexOutOfRange { m: usize, len: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown initial condition `{0}`")]
    UnknownInitialCondition(String),

    #[error("relative error undefined: reference field has zero norm")]
    ZeroReference,

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("cycle {cycle}: {source}")]
    Cycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing snapshot at t = {0}")]
    MissingSnapshot(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short stable identifier for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::IndexOutOfRange { .. } | Error::FlatIndexOutOfRange { .. } => "index_out_of_range",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::UnknownInitialCondition(_) => "unknown_initial_condition",
            Error::ZeroReference => "zero_reference",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Cycle { .. } => "cycle",
            Error::MissingSnapshot(_) => "missing_snapshot",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
