//! `Idempotency-Key` handling for POST endpoints.
//!
//! The first successful response for a (path, key) pair is cached and replayed
//! for retries with the same body. A retry with a different body gets 409.

use std::collections::HashMap;
use std::sync::Mutex;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use sha2::{Digest, Sha256};

use crate::error::ApiError;
use crate::AppState;

pub const HEADER: &str = "idempotency-key";
const BODY_LIMIT: usize = 4 * 1024 * 1024;

enum Entry {
    InFlight { fingerprint: Vec<u8> },
    Done { fingerprint: Vec<u8>, status: StatusCode, content_type: Option<HeaderValue>, body: Bytes },
}

impl Entry {
    fn fingerprint(&self) -> &[u8] {
        match self {
            Entry::InFlight { fingerprint } | Entry::Done { fingerprint, .. } => fingerprint,
        }
    }
}

#[derive(Default)]
pub struct IdempotencyCache {
    entries: Mutex<HashMap<String, Entry>>,
}

impl IdempotencyCache {
    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Entry>> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn conflict(message: &str) -> Response {
    ApiError::new(StatusCode::CONFLICT, "idempotency_conflict", message).into_response()
}

pub async fn middleware(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if req.method() != Method::POST {
        return next.run(req).await;
    }
    let Some(key) = req.headers().get(HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned) else {
        return next.run(req).await;
    };
    let (parts, body) = req.into_parts();
    let bytes = match to_bytes(body, BODY_LIMIT).await {
        Ok(b) => b,
        Err(e) => return ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "too_large", e.to_string()).into_response(),
    };
    let slot = format!("{}\n{key}", parts.uri.path());
    let fingerprint = Sha256::digest(&bytes).to_vec();
    let cache = &state.inner.idempotency;
    {
        let mut entries = cache.lock();
        match entries.get(&slot) {
            Some(entry) if entry.fingerprint() != fingerprint.as_slice() => {
                return conflict("idempotency key was already used with a different body");
            }
            Some(Entry::InFlight { .. }) => return conflict("a request with this idempotency key is in progress"),
            Some(Entry::Done { status, content_type, body, .. }) => {
                let mut resp = (*status, body.clone()).into_response();
                if let Some(ct) = content_type {
                    resp.headers_mut().insert(axum::http::header::CONTENT_TYPE, ct.clone());
                }
                return resp;
            }
            None => {
                entries.insert(slot.clone(), Entry::InFlight { fingerprint: fingerprint.clone() });
            }
        }
    }

    let resp = next.run(Request::from_parts(parts, Body::from(bytes))).await;
    if !resp.status().is_success() {
        cache.lock().remove(&slot);
        return resp;
    }
    let (parts, body) = resp.into_parts();
    let body = match to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(e) => {
            cache.lock().remove(&slot);
            return ApiError::internal(e.to_string()).into_response();
        }
    };
    let content_type = parts.headers.get(axum::http::header::CONTENT_TYPE).cloned();
    cache.lock().insert(slot, Entry::Done { fingerprint, status: parts.status, content_type, body: body.clone() });
    Response::from_parts(parts, Body::from(body))
}
