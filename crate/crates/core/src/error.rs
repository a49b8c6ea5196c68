use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report. Variants are grouped so the CLI can
/// map them onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("duplicate transcript id `{id}` in {path} (line {line})")]
    DuplicateId {
        path: String,
        id: String,
        line: usize,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("unknown context `{0}` for one-hot vocabulary")]
    Vocabulary(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("setting error: {0}")]
    Setting(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable code used when a grid cell fails.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Format { .. } => "format",
            Error::Parse { .. } => "parse",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::Alignment(_) => "alignment",
            Error::Domain(_) => "domain",
            Error::Parameter(_) => "parameter",
            Error::Vocabulary(_) => "vocabulary",
            Error::Schema(_) => "schema",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Pairing(_) => "pairing",
            Error::Solver(_) => "solver",
            Error::Setting(_) => "setting",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
