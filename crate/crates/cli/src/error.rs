use conduit_service::{ApiError, ErrorKind};
use thiserror::Error;

/// Everything a command can fail with, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: flags, files, or a request the service rejected.
    #[error("{0}")]
    Validation(String),
    /// The service could not be reached or refused our credentials.
    #[error("{0}")]
    Connection(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Connection(_) => 2,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        match e.code {
            ErrorKind::AuthFailed | ErrorKind::Unavailable => CliError::Connection(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("malformed JSON: {e}"))
    }
}

impl From<serde_yaml::Error> for CliError {
    fn from(e: serde_yaml::Error) -> Self {
        CliError::Validation(format!("malformed YAML: {e}"))
    }
}

impl From<conduit_site::ModuleError> for CliError {
    fn from(e: conduit_site::ModuleError) -> Self {
        match e {
            conduit_site::ModuleError::Api(a) => a.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
