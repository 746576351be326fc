//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the simulator, the coordination stack and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid scenario/experiment configuration (maps to process exit 2).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller passed an argument that violates an operation's contract.
    #[error("input error: {0}")]
    Input(String),

    /// The remote backend could not be reached after exhausting retries
    /// (maps to process exit 3 when fallback is disabled).
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    /// The remote backend rejected the request (4xx); retrying won't help.
    #[error("backend rejected request: {0}")]
    BackendRequest(String),

    /// A response or file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// A parsed value failed schema/domain validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// Regional coordination failed and fallback was disabled.
    #[error("coordination error: {0}")]
    Coordination(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI: 2 for configuration errors, 3 for an
    /// unavailable backend, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::BackendUnavailable(_) => 3,
            _ => 1,
        }
    }
}
