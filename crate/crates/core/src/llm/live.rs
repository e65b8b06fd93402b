use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::{CompletionBackend, CompletionRequest, CompletionResult, FinishReason, LlmError};

pub const ENV_API_KEY: &str = "SIMULACRA_API_KEY";
pub const ENV_API_URL: &str = "SIMULACRA_API_URL";
pub const ENV_MODEL: &str = "SIMULACRA_MODEL";
pub const ENV_MAX_RETRIES: &str = "SIMULACRA_MAX_RETRIES";
pub const ENV_MIN_INTERVAL_MS: &str = "SIMULACRA_MIN_INTERVAL_MS";

fn env_number(name: &str) -> Result<Option<u64>, LlmError> {
    match std::env::var(name) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| LlmError::Precondition(format!("{name} must be a non-negative integer, not {v:?}"))),
        _ => Ok(None),
    }
}

#[derive(Clone)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub api_key: String,
    pub model_name: String,
    pub max_retries: u32,
    pub request_timeout: Duration,
    pub min_request_interval: Duration,
}

impl fmt::Debug for BackendConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendConfig")
            .field("endpoint_url", &self.endpoint_url)
            .field("api_key", &"<redacted>")
            .field("model_name", &self.model_name)
            .field("max_retries", &self.max_retries)
            .field("request_timeout", &self.request_timeout)
            .field("min_request_interval", &self.min_request_interval)
            .finish()
    }
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>, api_key: impl Into<String>) -> Result<Self, LlmError> {
        let endpoint_url = endpoint_url.into();
        if !(endpoint_url.starts_with("http://") || endpoint_url.starts_with("https://")) {
            return Err(LlmError::Precondition(format!("endpoint {endpoint_url:?} is not an http(s) URL")));
        }
        Ok(Self {
            endpoint_url,
            api_key: api_key.into(),
            model_name: "davinci".into(),
            max_retries: 3,
            request_timeout: Duration::from_secs(60),
            min_request_interval: Duration::ZERO,
        })
    }

    /// Reads `SIMULACRA_API_URL`, `SIMULACRA_API_KEY` and optionally
    /// `SIMULACRA_MODEL`, `SIMULACRA_MAX_RETRIES`, `SIMULACRA_MIN_INTERVAL_MS`.
    pub fn from_env() -> Result<Self, LlmError> {
        let url = std::env::var(ENV_API_URL)
            .map_err(|_| LlmError::Precondition(format!("{ENV_API_URL} is not set")))?;
        let key = std::env::var(ENV_API_KEY).unwrap_or_default();
        let mut config = Self::new(url, key)?;
        if let Ok(model) = std::env::var(ENV_MODEL) {
            if !model.trim().is_empty() {
                config.model_name = model;
            }
        }
        if let Some(n) = env_number(ENV_MAX_RETRIES)? {
            config.max_retries = n as u32;
        }
        if let Some(ms) = env_number(ENV_MIN_INTERVAL_MS)? {
            config.min_request_interval = Duration::from_millis(ms);
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// One HTTP POST of a JSON body. Swappable so retry logic is testable offline.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, api_key: &str, body: &str) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, api_key: &str, body: &str) -> Result<HttpResponse, TransportError> {
        let mut request = self.agent.post(url).content_type("application/json");
        if !api_key.is_empty() {
            request = request.header("Authorization", &format!("Bearer {api_key}"));
        }
        let mut response = request.send(body).map_err(|e| TransportError(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

type Sleeper = dyn Fn(Duration) + Send + Sync;

/// Client for a remote completion endpoint speaking
/// `POST {model, prompt, temperature, max_tokens, stop}` →
/// `{choices: [{text, finish_reason}]}`.
pub struct HttpBackend {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
    sleep: Arc<Sleeper>,
    last_dispatch: Mutex<Option<Instant>>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Self {
        let transport = Arc::new(UreqTransport::new(config.request_timeout));
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: BackendConfig, transport: Arc<dyn Transport>) -> Self {
        Self {
            config,
            transport,
            sleep: Arc::new(std::thread::sleep),
            last_dispatch: Mutex::new(None),
        }
    }

    /// Replaces `thread::sleep` for backoff and rate limiting.
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn backoff(attempt: u32) -> Duration {
        Duration::from_secs(1u64 << attempt.min(16))
    }

    fn wire_body(&self, request: &CompletionRequest) -> String {
        let mut body = json!({
            "model": self.config.model_name,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stop": request.stop,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body.to_string()
    }

    fn wait_for_slot(&self) {
        let mut last = self.last_dispatch.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.config.min_request_interval {
                (self.sleep)(self.config.min_request_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn parse(body: &str) -> Result<CompletionResult, LlmError> {
        let wire: WireResponse = serde_json::from_str(body).map_err(|e| LlmError::Protocol(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::Protocol("response has no choices".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("stop") => FinishReason::StopSequence,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        };
        Ok(CompletionResult { text: choice.text, finish_reason })
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let body = self.wire_body(request);
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                (self.sleep)(Self::backoff(attempt - 1));
            }
            self.wait_for_slot();
            match self.transport.post_json(&self.config.endpoint_url, &self.config.api_key, &body) {
                Ok(resp) if (200..300).contains(&resp.status) => return Self::parse(&resp.body),
                Ok(resp) if (400..500).contains(&resp.status) => {
                    return Err(LlmError::Configuration { status: resp.status, body: resp.body });
                }
                Ok(resp) => last_error = format!("HTTP {}: {}", resp.status, resp.body),
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(LlmError::BackendUnavailable { attempts, last_error })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        replies: Mutex<Vec<Result<HttpResponse, TransportError>>>,
        calls: AtomicUsize,
        bodies: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<HttpResponse, TransportError>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Self { replies: Mutex::new(replies), calls: AtomicUsize::new(0), bodies: Mutex::new(vec![]) })
        }
    }

    impl Transport for Scripted {
        fn post_json(&self, _: &str, _: &str, body: &str) -> Result<HttpResponse, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.bodies.lock().unwrap().push(body.to_string());
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Err(TransportError("connection refused".into())))
        }
    }

    fn backend(t: Arc<Scripted>) -> (HttpBackend, Arc<Mutex<Vec<Duration>>>) {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let s = slept.clone();
        let cfg = BackendConfig::new("http://localhost:9/v1/completions", "k").unwrap();
        let b = HttpBackend::with_transport(cfg, t).with_sleeper(move |d| s.lock().unwrap().push(d));
        (b, slept)
    }

    fn ok(body: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse { status: 200, body: body.into() })
    }

    #[test]
    fn network_down_exhausts_retries_with_exponential_backoff() {
        let t = Scripted::new(vec![]);
        let (b, slept) = backend(t.clone());
        let err = b.complete(&CompletionRequest::content("p", 0.7, 0)).unwrap_err();
        assert!(matches!(err, LlmError::BackendUnavailable { attempts: 4, .. }), "{err}");
        assert_eq!(t.calls.load(Ordering::SeqCst), 4);
        let secs: Vec<u64> = slept.lock().unwrap().iter().map(|d| d.as_secs()).collect();
        assert_eq!(secs, vec![1, 2, 4]);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Scripted::new(vec![Ok(HttpResponse { status: 401, body: "bad key".into() })]);
        let (b, _) = backend(t.clone());
        let err = b.complete(&CompletionRequest::content("p", 0.7, 0)).unwrap_err();
        assert!(matches!(err, LlmError::Configuration { status: 401, .. }));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn server_error_then_success() {
        let t = Scripted::new(vec![
            Ok(HttpResponse { status: 503, body: "busy".into() }),
            ok(r#"{"choices":[{"text":" hi</span>","finish_reason":"stop"}]}"#),
        ]);
        let (b, slept) = backend(t.clone());
        let res = b.complete(&CompletionRequest::content("p", 0.7, 5)).unwrap();
        assert_eq!(res.text, " hi</span>");
        assert_eq!(res.finish_reason, FinishReason::StopSequence);
        assert_eq!(slept.lock().unwrap().len(), 1);
        let sent: serde_json::Value = serde_json::from_str(&t.bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["model"], "davinci");
        assert_eq!(sent["stop"][0], "</span>");
        assert_eq!(sent["max_tokens"], 256);
        assert_eq!(sent["seed"], 5);
    }

    #[test]
    fn malformed_body_is_a_protocol_error() {
        let t = Scripted::new(vec![ok("{}")]);
        let (b, _) = backend(t);
        assert!(matches!(b.complete(&CompletionRequest::content("p", 0.7, 0)), Err(LlmError::Protocol(_))));
    }

    #[test]
    fn rate_limiter_spaces_dispatches() {
        let t = Scripted::new(vec![ok(r#"{"choices":[{"text":"a"}]}"#), ok(r#"{"choices":[{"text":"b"}]}"#)]);
        let slept = Arc::new(Mutex::new(Vec::new()));
        let s = slept.clone();
        let mut cfg = BackendConfig::new("https://example.invalid/v1/completions", "k").unwrap();
        cfg.min_request_interval = Duration::from_secs(30);
        let b = HttpBackend::with_transport(cfg, t).with_sleeper(move |d| s.lock().unwrap().push(d));
        b.complete(&CompletionRequest::content("p", 0.7, 0)).unwrap();
        b.complete(&CompletionRequest::content("p", 0.7, 0)).unwrap();
        let slept = slept.lock().unwrap();
        assert_eq!(slept.len(), 1);
        assert!(slept[0] > Duration::from_secs(29));
    }

    #[test]
    fn config_rejects_non_http_urls_and_hides_key() {
        assert!(BackendConfig::new("ftp://x", "k").is_err());
        let cfg = BackendConfig::new("https://x", "sk-secret").unwrap();
        assert!(!format!("{cfg:?}").contains("sk-secret"));
    }
}
