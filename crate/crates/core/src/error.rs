use std::path::PathBuf;

use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event at t={fire_time} is before the clock (t={clock})")]
    PastEvent { fire_time: f64, clock: f64 },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("nodes {0} and {1} are not adjacent")]
    NotAdjacent(NodeId, NodeId),

    #[error("no route from {0} to {1}")]
    NoRoute(NodeId, NodeId),

    #[error("invalid rate {0} bps: must be positive")]
    InvalidRate(f64),

    #[error("rate comparison undefined: previous rate is zero")]
    UndefinedComparison,

    #[error("flow {0} has zero sending rate")]
    RateZero(usize),

    #[error("no packets were sent by the selected flows")]
    NoTraffic,

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
