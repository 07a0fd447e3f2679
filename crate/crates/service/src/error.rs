use std::fmt;

use conduit_core::ModelError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Machine-readable error code, serialized as the `code` field of error bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorKind {
    Validation,
    InvalidFilter,
    MissingParameter,
    MissingRequiredSlot,
    UnknownSlot,
    CyclicDependency,
    AuthFailed,
    ForeignSite,
    Forbidden,
    NotFound,
    UnknownApp,
    UnknownSession,
    DuplicateSite,
    InvalidTransition,
    InvalidBatchJobTransition,
    InvalidItemState,
    SessionExpired,
    LeaseLost,
    Conflict,
    Unavailable,
    Internal,
}

impl ErrorKind {
    pub fn status(self) -> u16 {
        use ErrorKind::*;
        match self {
            Validation | InvalidFilter | MissingParameter | MissingRequiredSlot | UnknownSlot | CyclicDependency => 400,
            AuthFailed => 401,
            ForeignSite | Forbidden => 403,
            NotFound | UnknownApp | UnknownSession => 404,
            DuplicateSite | InvalidTransition | InvalidBatchJobTransition | InvalidItemState | SessionExpired
            | LeaseLost | Conflict => 409,
            Unavailable => 503,
            Internal => 500,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Error body shared by the in-process and HTTP transports.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: ErrorKind,
    pub message: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub detail: serde_json::Value,
}

impl ApiError {
    pub fn new(code: ErrorKind, message: impl Into<String>) -> Self {
        ApiError { code, message: message.into(), detail: serde_json::Value::Null }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn status(&self) -> u16 {
        self.code.status()
    }

    pub fn not_found(what: impl fmt::Display) -> Self {
        ApiError::new(ErrorKind::NotFound, format!("{what} not found"))
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        let code = match &e {
            ModelError::MissingParameter(_) | ModelError::UnknownParameter(_) => ErrorKind::MissingParameter,
            ModelError::MissingRequiredSlot(_) => ErrorKind::MissingRequiredSlot,
            ModelError::UnknownSlot(_) => ErrorKind::UnknownSlot,
            ModelError::InvalidTransition { .. } | ModelError::NonMonotonicTimestamp { .. } => ErrorKind::InvalidTransition,
            ModelError::UnknownState(_) => ErrorKind::InvalidFilter,
            ModelError::InvalidApp(_) | ModelError::InvalidResources(_) => ErrorKind::Validation,
        };
        ApiError::new(code, e.to_string())
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
