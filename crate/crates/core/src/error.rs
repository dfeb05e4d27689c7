use thiserror::Error;

use crate::env::{Action, NodeId};

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("illegal action {action:?} at node {node}")]
    IllegalAction { node: NodeId, action: Action },

    #[error("illegal prefix: {0}")]
    IllegalPrefix(String),

    #[error("policy was built for graph {policy} but was used with graph {graph}")]
    GraphMismatch { policy: String, graph: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("target band unreachable after {iterations} pretraining iterations (best in-band fraction {best_fraction:.3})")]
    BandUnreachable { iterations: usize, best_fraction: f64 },

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
