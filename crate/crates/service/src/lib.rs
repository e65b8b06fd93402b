//! HTTP API over the simulation engine.
//!
//! Universe generation runs as background jobs (`POST .../generate`, then poll
//! `GET /api/jobs/{id}`); what-if probes and thread resampling answer
//! synchronously. Everything is persisted through [`Store`] before a 2xx
//! response goes out.

pub mod error;
pub mod idempotency;
pub mod jobs;
mod routes;

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, Method};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::Router;
use simulacra_core::llm::{AuditLog, BackendConfig, HttpBackend, MockBackend};
use simulacra_core::{Gateway, Store};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::error::ApiError;
use crate::idempotency::IdempotencyCache;
use crate::jobs::JobQueue;

pub const DEFAULT_PORT: u16 = 8080;
pub const PAGE_SIZE: usize = 20;
pub const OPENAPI: &str = include_str!("../openapi.yaml");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    Live,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub port: u16,
    pub token: Option<String>,
    pub max_concurrent_jobs: usize,
    pub backend: BackendKind,
    pub cors_origin: Option<String>,
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

impl ServiceConfig {
    /// Reads `SIMULACRA_*` variables. The backend defaults to live when an
    /// API key is present and to the mock otherwise.
    pub fn from_env() -> anyhow::Result<Self> {
        let backend = match env("SIMULACRA_BACKEND").as_deref() {
            Some("mock") => BackendKind::Mock,
            Some("live") => BackendKind::Live,
            Some(other) => anyhow::bail!("SIMULACRA_BACKEND must be mock or live, not {other:?}"),
            None if env(simulacra_core::llm::ENV_API_KEY).is_some() => BackendKind::Live,
            None => BackendKind::Mock,
        };
        Ok(Self {
            data_dir: env(simulacra_core::store::DATA_DIR_ENV)
                .unwrap_or_else(|| simulacra_core::store::DEFAULT_DATA_DIR.into())
                .into(),
            port: env("SIMULACRA_PORT").map(|p| p.parse()).transpose().context("SIMULACRA_PORT")?.unwrap_or(DEFAULT_PORT),
            token: env("SIMULACRA_TOKEN"),
            max_concurrent_jobs: env("SIMULACRA_MAX_JOBS")
                .map(|p| p.parse())
                .transpose()
                .context("SIMULACRA_MAX_JOBS")?
                .unwrap_or(1),
            backend,
            cors_origin: env("SIMULACRA_CORS_ORIGIN"),
        })
    }
}

#[derive(Clone)]
pub struct AppState {
    pub(crate) inner: Arc<Inner>,
}

pub(crate) struct Inner {
    pub store: Store,
    pub gateway: Gateway,
    pub jobs: Arc<JobQueue>,
    pub idempotency: IdempotencyCache,
    pub token: Option<String>,
}

impl AppState {
    pub fn new(store: Store, gateway: Gateway, token: Option<String>, max_concurrent_jobs: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                store,
                gateway,
                jobs: Arc::new(JobQueue::new(max_concurrent_jobs)),
                idempotency: IdempotencyCache::default(),
                token,
            }),
        }
    }

    /// Opens the store and backend named by `config`. Completions are
    /// audited to `audit/service.ndjson` in the store.
    pub fn from_config(config: &ServiceConfig) -> anyhow::Result<Self> {
        let store = Store::open(&config.data_dir)?;
        let audit = Arc::new(AuditLog::with_file(&store.audit_path("service")?)?);
        let gateway = match config.backend {
            BackendKind::Mock => Gateway::new(Arc::new(MockBackend::new()), audit),
            BackendKind::Live => Gateway::new(Arc::new(HttpBackend::new(BackendConfig::from_env()?)), audit),
        };
        Ok(Self::new(store, gateway, config.token.clone(), config.max_concurrent_jobs))
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn gateway(&self) -> &Gateway {
        &self.inner.gateway
    }
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.inner.token {
        let ok = req.method() == Method::OPTIONS
            || req
                .headers()
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
                .is_some_and(|given| given == token);
        if !ok {
            return ApiError::new(axum::http::StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

fn cors(origin: Option<&str>) -> CorsLayer {
    let allow = match origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers(Any)
}

/// The full API, CORS included.
pub fn router(state: AppState, cors_origin: Option<&str>) -> Router {
    routes::api()
        .layer(middleware::from_fn_with_state(state.clone(), idempotency::middleware))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(cors(cors_origin))
        .with_state(state)
}
