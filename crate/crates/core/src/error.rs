use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the collective-learning engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    Dimension {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate batch: every loss weight is zero")]
    DegenerateBatch,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("inconsistent node counts: {0}")]
    NodeCount(String),

    #[error("sampling failed: {0}")]
    SamplingFailure(String),

    #[error("empty labeled set: {0}")]
    EmptyLabeledSet(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("graph has {0} nodes, brute-force isomorphism is limited to {1}")]
    SizeBound(usize, usize),

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
