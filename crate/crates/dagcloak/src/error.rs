//! Crate-wide error type.

use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("graph is compiled and immutable")]
    GraphSealed,
    #[error("cycle detected through node {0}")]
    Cycle(NodeId),
    #[error("op {kind} expected {expected} inputs, got {got}")]
    Arity {
        kind: String,
        expected: String,
        got: usize,
    },
    #[error("malformed payload: {0}")]
    Format(String),
    #[error("missing or mismatched graph inputs: {0}")]
    Input(String),
    #[error("division by zero baseline field: {0}")]
    Division(String),
    #[error("output does not match strip map: {0}")]
    Corruption(String),
    #[error("all frontiers are exhausted")]
    Exhausted,
    #[error("cannot split dataset: {0}")]
    Split(String),
    #[error("feature shape mismatch: {0}")]
    Shape(String),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
