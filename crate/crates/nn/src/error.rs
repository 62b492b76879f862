use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op} (node {node}): {detail}")]
    Shape {
        op: &'static str,
        node: usize,
        detail: String,
    },
    #[error("tensor data length {got} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, got: usize },
    #[error("node {0} does not exist in this graph")]
    UnknownNode(usize),
    #[error("backward requires a scalar loss, node {node} has shape {shape:?}")]
    NonScalarLoss { node: usize, shape: Vec<usize> },
    #[error("backward called on an empty graph (run a forward pass first)")]
    EmptyGraph,
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("tangent propagation is not supported through {0}")]
    NoTangent(&'static str),
    #[error("parameter `{0}` not found")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
