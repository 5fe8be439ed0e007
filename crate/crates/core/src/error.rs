use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {index} out of range for {n_nodes} nodes")]
    NodeOutOfRange { index: usize, n_nodes: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("label {label} on node {node} is not below the class count {n_classes}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("graphs differ in size: {0} vs {1} nodes")]
    SizeMismatch(usize, usize),
    #[error("no labeled nodes")]
    NoLabeledNodes,
    #[error("no unlabeled nodes")]
    NoUnlabeledNodes,
    #[error("empty node mask")]
    EmptyMask,
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("budget {budget} exceeds the {pairs} available node pairs")]
    BudgetTooLarge { budget: usize, pairs: usize },
    #[error("no feasible flip after {0} attempts")]
    NoFeasibleFlip(usize),
    #[error("empty seed list")]
    EmptySeeds,
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
