use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use simulacra_core::engine::EngineError;
use simulacra_core::{LlmError, ScenarioError, StoreError};

/// An error rendered as `{"error": code, "message": ..., "violations": [...]}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub violations: Vec<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), violations: Vec::new() }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn invalid(message: impl Into<String>, violations: Vec<String>) -> Self {
        Self { violations, ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message) }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if !self.violations.is_empty() {
            body["violations"] = json!(self.violations);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { .. } | StoreError::InvalidId(_) => Self::not_found(e.to_string()),
            StoreError::AlreadyExists { .. } => Self::new(StatusCode::CONFLICT, "conflict", e.to_string()),
            StoreError::Integrity { .. } | StoreError::Io { .. } => Self::internal(e.to_string()),
        }
    }
}

/// Status and code for an engine failure.
pub fn classify(e: &EngineError) -> (StatusCode, &'static str) {
    match e.backend() {
        Some(LlmError::BackendUnavailable { .. }) => (StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable"),
        Some(LlmError::Configuration { .. }) => (StatusCode::BAD_GATEWAY, "backend_rejected"),
        Some(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        None => match e {
            EngineError::Model(_) | EngineError::Prompt(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        },
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let (status, code) = classify(&e);
        Self::new(status, code, e.to_string())
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::NotFound(_) => Self::not_found(e.to_string()),
            ScenarioError::InvalidSpec(msg) => Self::invalid(msg.clone(), vec![msg]),
            ScenarioError::Generation(inner) => inner.into(),
        }
    }
}
