use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown profile `{0}` (expected `desk` or `paper_shape`)")]
    UnknownProfile(String),

    #[error("unknown technology id {0}")]
    UnknownTechnology(i64),

    #[error("design does not match schema: {0}")]
    SchemaMismatch(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("design is geometrically invalid (violated: {0:?})")]
    InvalidGeometry(Vec<String>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: String,
    },

    #[error("insufficient valid designs for technology {technology}: achieved {achieved} of {requested}")]
    InsufficientValid {
        technology: i64,
        requested: usize,
        achieved: usize,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("forward cache is stale or missing")]
    StaleCache,

    #[error("loss became NaN in term `{term}` at epoch {epoch}")]
    NanLoss { term: String, epoch: usize },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("bundle format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(expected: usize, actual: usize, context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected,
            actual,
            context: context.into(),
        }
    }
}
