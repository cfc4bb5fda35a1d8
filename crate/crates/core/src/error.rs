use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("referential error: {0}")]
    Referential(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("graph is invalid: {0} violation(s), first: {1}")]
    InvalidGraph(usize, String),
    #[error("unknown node: {0}")]
    UnknownNode(String),
    #[error("unknown region: {0}")]
    UnknownRegion(String),
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cannot train: {0}")]
    Untrainable(String),
    #[error("missing view: {0}")]
    MissingView(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("too few rows: {0}")]
    TooFewRows(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable kind tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Referential(_) => "referential",
            Error::Schema(_) => "schema",
            Error::InvalidGraph(..) => "invalid-graph",
            Error::UnknownNode(_) => "unknown-node",
            Error::UnknownRegion(_) => "unknown-region",
            Error::InvalidPattern(_) => "invalid-pattern",
            Error::InvalidSpec(_) => "invalid-spec",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::Untrainable(_) => "untrainable",
            Error::MissingView(_) => "missing-view",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::TooFewRows(_) => "too-few-rows",
            Error::InvalidArgument(_) => "invalid-argument",
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
