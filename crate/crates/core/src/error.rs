use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unparseable cells in rows {rows:?}: {detail}")]
    Unparseable { rows: Vec<usize>, detail: String },

    #[error("duplicate date {0}")]
    DuplicateDate(String),

    #[error("dates not strictly increasing at row {row}: {date} follows {previous}")]
    NonMonotoneDates {
        row: usize,
        date: String,
        previous: String,
    },

    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-positive price {value} at row {row}, column {column}")]
    NonPositivePrice {
        row: usize,
        column: usize,
        value: f64,
    },

    #[error("series {0} has zero variance")]
    DegenerateSeries(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability level {0} outside (0, 1)")]
    InvalidLevel(f64),

    #[error("degrees of freedom {0} must exceed 1 for expected shortfall")]
    EsUndefined(f64),

    #[error("root search failed to bracket level {level}")]
    BracketFailure { level: f64 },

    #[error("forward recursion underflow at t = {0}")]
    Underflow(usize),

    #[error("regime {regime} collapsed: posterior mass {mass:.3} below {required}")]
    RegimeCollapse {
        regime: usize,
        mass: f64,
        required: usize,
    },

    #[error("all {0} restarts failed; last error: {1}")]
    AllRestartsFailed(usize, Box<Error>),

    #[error("index {index} out of range 0..{len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("oracle grid failed: {0}")]
    GridFailure(String),

    #[error("incomplete characteristic map: {0}")]
    IncompleteMap(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
