use thiserror::Error;

use crate::tree::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown node id {0}")]
    UnknownNode(NodeId),

    #[error("node {0} is a leaf")]
    LeafNode(NodeId),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("run did not stop within {0} rounds")]
    RoundCap(u64),

    #[error("engine mismatch at round {round}: {detail}")]
    EngineMismatch { round: u64, detail: String },

    #[error("instance generation failed after {0} attempts")]
    ResampleCap(usize),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
