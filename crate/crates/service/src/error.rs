use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use crowdms_core::assembler::{AssembleError, PublishError};
use crowdms_core::validate::Violation;
use crowdms_core::CommandError;
use serde::{Deserialize, Serialize};

use crate::reply;

/// The body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub code: String,
    pub message: String,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub envelope: ErrorEnvelope,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            envelope: ErrorEnvelope { code: code.into(), message: message.into(), violations: vec![] },
        }
    }

    pub fn with_violations(mut self, violations: Vec<Violation>) -> Self {
        self.envelope.violations = violations;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid-request", message)
    }

    pub fn unauthenticated() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", "a valid bearer token is required")
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", format!("not found: {what}"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<CommandError> for ApiError {
    fn from(e: CommandError) -> Self {
        let message = e.to_string();
        match e {
            CommandError::Invalid(v) => ApiError::bad_request(message).with_violations(v),
            CommandError::StaleAssignment(_) => ApiError::new(StatusCode::CONFLICT, "stale-assignment", message),
            CommandError::AlreadyAssigned { .. } => ApiError::new(StatusCode::CONFLICT, "already-assigned", message),
            CommandError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "conflict", message),
            CommandError::NotFound(what) => ApiError::not_found(what),
            CommandError::Unauthorized(_) => ApiError::forbidden(message),
            CommandError::Internal(_) => ApiError::internal(message),
        }
    }
}

impl From<AssembleError> for ApiError {
    fn from(e: AssembleError) -> Self {
        let message = e.to_string();
        match e {
            AssembleError::Incomplete(names) => ApiError::new(StatusCode::CONFLICT, "incomplete-project", message)
                .with_violations(names.into_iter().map(|n| Violation::new("functions", n)).collect()),
            AssembleError::NoRequest | AssembleError::MissingEndpointFunction(_) => ApiError::internal(message),
        }
    }
}

impl From<PublishError> for ApiError {
    fn from(e: PublishError) -> Self {
        match e {
            PublishError::Command(c) => c.into(),
            PublishError::Target(msg) => ApiError::new(StatusCode::BAD_GATEWAY, "deploy-failed", msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        reply(self.status, &self.envelope)
    }
}
