use thiserror::Error;

use crate::state::JobState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("missing required parameter `{0}`")]
    MissingParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("missing required transfer slot `{0}`")]
    MissingRequiredSlot(String),
    #[error("unknown transfer slot `{0}`")]
    UnknownSlot(String),
    #[error("invalid transition {from} -> {to}")]
    InvalidTransition { from: JobState, to: JobState },
    #[error("event timestamp {got} precedes last event at {last}")]
    NonMonotonicTimestamp { last: i64, got: i64 },
    #[error("unknown job state `{0}`")]
    UnknownState(String),
    #[error("invalid app definition: {0}")]
    InvalidApp(String),
    #[error("invalid resource spec: {0}")]
    InvalidResources(String),
}
