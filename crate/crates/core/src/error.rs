use std::path::PathBuf;

use thiserror::Error;

use crate::linkmf::LinkModel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("graph is empty: {0}")]
    EmptyGraph(String),

    #[error("node {node} out of range for graph with {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{}: no rows for graph nodes {}", path.display(), ids.join(", "))]
    MissingIds { path: PathBuf, ids: Vec<String> },

    #[error("not enough non-edges to sample: need {needed}, graph has {available} (short by {})", needed - available)]
    InsufficientNonEdges { needed: usize, available: usize },

    #[error("gradient descent diverged at iteration {iteration}: cost rose on every backtracking attempt")]
    Divergence {
        iteration: usize,
        last_model: Box<LinkModel>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the optimizers rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::Numerical(_))
    }
}
