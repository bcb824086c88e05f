use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("channel count {channels} is not divisible by beta={beta}{}", at_node(.node))]
    NonDivisibleChannels {
        channels: usize,
        beta: usize,
        node: Option<String>,
    },

    #[error("shape mismatch{}: {detail}", at_node(.node))]
    ShapeMismatch {
        node: Option<String>,
        detail: String,
    },

    #[error("graph contains a cycle through node '{0}'")]
    CycleDetected(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid graph: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("no rewrite rule for node '{node}' of kind {kind}")]
    UnsupportedNode { node: String, kind: String },

    #[error("transform verification failed: {0}")]
    VerificationFailed(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    DivergedLoss { epoch: usize, step: usize },

    #[error("graph has not been rewritten with replicated convolutions")]
    NotRepGraph,

    #[error("unknown layer '{0}'")]
    UnknownLayer(String),

    #[error("i/o error: {0}")]
    Io(String),
}

fn at_node(node: &Option<String>) -> String {
    match node {
        Some(id) => format!(" at node '{id}'"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            node: None,
            detail: detail.into(),
        }
    }

    pub(crate) fn shape_at(node: &str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            node: Some(node.to_string()),
            detail: detail.into(),
        }
    }

    /// Attach a node id to errors that carry one and do not have it yet.
    pub(crate) fn at(self, id: &str) -> Self {
        match self {
            Error::ShapeMismatch { node: None, detail } => Error::ShapeMismatch {
                node: Some(id.to_string()),
                detail,
            },
            Error::NonDivisibleChannels {
                channels,
                beta,
                node: None,
            } => Error::NonDivisibleChannels {
                channels,
                beta,
                node: Some(id.to_string()),
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
