use thiserror::Error;

use crate::flow::FlowId;

/// Errors raised by the scheduling toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("operation not applicable: {0}")]
    NotApplicable(String),

    #[error("arithmetic overflow while computing {0}")]
    Overflow(&'static str),

    #[error("hyperperiod {hyperperiod} exceeds the cap of {cap} ticks")]
    HyperperiodOverflow { hyperperiod: u128, cap: u128 },

    #[error("linear system has no integer solution")]
    NoSolution,

    #[error("overlap vector component {index} is zero; equal starts are a first-kind conflict")]
    ZeroOverlap { index: usize },

    #[error("queue assignment failed: {0}")]
    QueueAssignment(String),

    #[error("packet {packet} of flow {flow} cannot be moved clear within its jitter and delay bounds")]
    RelaxationExhausted { flow: FlowId, packet: u64 },

    #[error("fixed packets {packets:?} of flows {flows:?} collide")]
    PinnedCollision { flows: [FlowId; 2], packets: [u64; 2] },

    #[error("schedule search timed out after {elapsed_ms} ms")]
    Timeout { elapsed_ms: u64 },

    #[error("flow {0} is not part of the schedule")]
    UnknownFlow(FlowId),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}
