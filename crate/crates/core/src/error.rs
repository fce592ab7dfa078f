use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("input `{0}` is not bound")]
    UnboundInput(String),

    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("domain error at node {node} ({op}): {detail}")]
    Domain {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error in field `{field}`: {detail}")]
    Checkpoint { field: &'static str, detail: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("architecture mismatch: checkpoint has `{checkpoint}`, config has `{config}`")]
    ArchMismatch { checkpoint: String, config: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NumericalAbort {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("unpaired run: {0}")]
    UnpairedRun(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Domain { .. } | Error::NumericalAbort { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
