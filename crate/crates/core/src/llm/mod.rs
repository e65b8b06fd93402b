//! Completion-model gateway.
//!
//! [`CompletionBackend`] is the raw contract (prompt in, text out). Two
//! implementations ship: [`HttpBackend`] for any remote completion API and
//! [`MockBackend`], a deterministic offline stand-in. [`Gateway`] wraps either
//! one with precondition checks, stop-string scrubbing and the audit log.

mod audit;
mod live;
mod mock;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{AuditLog, AuditRecord};
pub use live::{
    BackendConfig, HttpBackend, HttpResponse, Transport, TransportError, UreqTransport, ENV_API_KEY, ENV_API_URL, ENV_MODEL,
};
pub use mock::{stable_hash, MockBackend};

/// Stop string that closes every generated utterance.
pub const SPAN_CLOSE: &str = "</span>";
/// A blank line ends a batch of persona lines.
pub const PERSONA_BATCH_STOP: &str = "\n\n";

pub const CONTENT_MAX_TOKENS: u32 = 256;
pub const PERSONA_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    /// Sampling seed forwarded to backends that accept one. Lets independent
    /// alternatives of an identical prompt diverge under the mock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    /// Request for one utterance closed by `</span>`.
    pub fn content(prompt: impl Into<String>, temperature: f64, seed: u64) -> Self {
        Self {
            prompt: prompt.into(),
            temperature,
            max_tokens: CONTENT_MAX_TOKENS,
            stop: vec![SPAN_CLOSE.to_string()],
            seed: Some(seed),
        }
    }

    /// Request for a batch of `Name, description` lines.
    pub fn persona_batch(prompt: impl Into<String>, temperature: f64, seed: u64) -> Self {
        Self {
            prompt: prompt.into(),
            temperature,
            max_tokens: PERSONA_MAX_TOKENS,
            stop: vec![PERSONA_BATCH_STOP.to_string()],
            seed: Some(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    StopSequence,
    Length,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("backend rejected the request (HTTP {status}): {body}")]
    Configuration { status: u16, body: String },
    #[error("backend returned an empty completion")]
    EmptyGeneration,
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("audit log write failed: {0}")]
    Audit(#[from] std::io::Error),
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        (**self).complete(request)
    }
}

/// Truncates `text` at the earliest occurrence of any stop string.
/// Returns whether a stop string was found.
pub fn scrub_stop_strings(text: &mut String, stop: &[String]) -> bool {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min();
    match cut {
        Some(at) => {
            text.truncate(at);
            true
        }
        None => false,
    }
}

/// Shared entry point for every completion the engine issues.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    audit: Arc<AuditLog>,
    scope: Option<Arc<str>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn CompletionBackend>, audit: Arc<AuditLog>) -> Self {
        Self { backend, audit, scope: None }
    }

    /// Same backend and log; operation names get a `scope/` prefix.
    pub fn scoped(&self, scope: &str) -> Self {
        Self { scope: Some(Arc::from(scope)), ..self.clone() }
    }

    /// Mock backend with an in-memory audit log.
    pub fn mock() -> Self {
        Self::new(Arc::new(MockBackend::new()), Arc::new(AuditLog::in_memory()))
    }

    pub fn audit(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    /// `operation` names the caller in the audit record.
    pub fn complete(&self, request: &CompletionRequest, operation: &str) -> Result<CompletionResult, LlmError> {
        if request.prompt.is_empty() {
            return Err(LlmError::Precondition("prompt is empty".into()));
        }
        if request.stop.iter().all(|s| s.is_empty()) {
            return Err(LlmError::Precondition("stop list is empty".into()));
        }
        let mut result = self.backend.complete(request)?;
        if scrub_stop_strings(&mut result.text, &request.stop) {
            result.finish_reason = FinishReason::StopSequence;
        }
        let operation = match &self.scope {
            Some(scope) => format!("{scope}/{operation}"),
            None => operation.to_string(),
        };
        self.audit.append(AuditRecord::new(request, &result.text, &operation))?;
        if result.text.trim().is_empty() {
            return Err(LlmError::EmptyGeneration);
        }
        Ok(result)
    }
}
