use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use simulacra_core::engine::{generate_universe_with_progress, UniverseMeta};
use simulacra_core::scenario::{
    multiverse_community_with_progress, multiverse_thread, whatif_intervention, whatif_reply, DEFAULT_ALTERNATIVES,
};
use simulacra_core::store::{StoredBranch, StoredDesign, UniverseSummary};
use simulacra_core::{
    validate_design, Branch, CommunityDesign, DesignDraft, GenerationConfig, RngStream, StoreError, Thread,
    Universe, UniverseError, WhatIfSpec,
};

use crate::error::{classify, ApiError};
use crate::jobs::{Job, JobFailure, JobKind};
use crate::{AppState, OPENAPI, PAGE_SIZE};

type ApiResult<T> = Result<T, ApiError>;

pub(crate) fn api() -> Router<AppState> {
    Router::new()
        .route("/api/health", get(|| async { Json(serde_json::json!({ "status": "ok" })) }))
        .route("/api/openapi.yaml", get(|| async { ([(header::CONTENT_TYPE, "application/yaml")], OPENAPI) }))
        .route("/api/designs", post(create_design))
        .route("/api/designs/{id}", get(get_design))
        .route("/api/designs/{id}/universes", get(list_universes))
        .route("/api/designs/{id}/generate", post(start_generate))
        .route("/api/designs/{id}/multiverse", post(start_multiverse))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/universes/{id}", get(get_universe))
        .route("/api/universes/{id}/threads", get(list_threads))
        .route("/api/universes/{id}/branches", get(list_branches))
        .route("/api/universes/{id}/whatif", post(whatif))
        .route("/api/universes/{id}/threads/{tid}/multiverse", post(thread_multiverse))
}

/// Runs store or engine work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    let body = if body.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("malformed body: {e}"), vec![e.to_string()]))
}

fn fresh_seed() -> u64 {
    uuid::Uuid::new_v4().as_u64_pair().0
}

async fn create_design(State(state): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let draft: DesignDraft = parse_json(&body)?;
    let violations = validate_design(&draft);
    if !violations.is_empty() {
        return Err(ApiError::invalid("design is invalid", violations));
    }
    let design = CommunityDesign::try_from(draft).map_err(|e| ApiError::invalid(e.to_string(), vec![e.to_string()]))?;
    let stored = StoredDesign { id: uuid::Uuid::new_v4().to_string(), design };
    let out = stored.clone();
    blocking(move || Ok(state.store().save_design(&stored.id, &stored.design)?)).await?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn get_design(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StoredDesign>> {
    blocking(move || {
        let design = state.store().load_design(&id)?;
        Ok(Json(StoredDesign { id, design }))
    })
    .await
}

async fn list_universes(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<UniverseSummary>>> {
    blocking(move || {
        state.store().load_design(&id)?;
        Ok(Json(state.store().list_universes(&id)?))
    })
    .await
}

/// Overlays the body's fields on the default configuration. Without an
/// explicit `rng_seed` a fresh one is drawn.
fn config_from_overrides(body: &[u8]) -> ApiResult<GenerationConfig> {
    let overrides: Map<String, Value> = parse_json(body)?;
    let mut merged = match serde_json::to_value(GenerationConfig::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config serializes to an object"),
    };
    let unknown: Vec<String> =
        overrides.keys().filter(|k| !merged.contains_key(*k)).map(|k| format!("unknown field {k}")).collect();
    if !unknown.is_empty() {
        return Err(ApiError::invalid("unknown configuration fields", unknown));
    }
    if !overrides.contains_key("rng_seed") {
        merged.insert("rng_seed".into(), fresh_seed().into());
    }
    merged.extend(overrides);
    let config: GenerationConfig = serde_json::from_value(Value::Object(merged))
        .map_err(|e| ApiError::invalid(format!("malformed configuration: {e}"), vec![e.to_string()]))?;
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(ApiError::invalid("configuration is invalid", violations));
    }
    Ok(config)
}

fn job_failure(e: &UniverseError) -> JobFailure {
    JobFailure { code: classify(&e.source).1.to_string(), message: e.to_string() }
}

/// Saves `universe`, treating an identical earlier save as success.
fn persist(state: &AppState, universe: &Universe) -> Result<(), JobFailure> {
    match state.store().save_universe(universe) {
        Ok(()) | Err(StoreError::AlreadyExists { .. }) => Ok(()),
        Err(e) => Err(JobFailure { code: "internal".into(), message: e.to_string() }),
    }
}

fn load_design_for_job(state: &AppState, id: &str) -> ApiResult<CommunityDesign> {
    Ok(state.store().load_design(id)?)
}

async fn start_generate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let config = config_from_overrides(&body)?;
    let design = {
        let (state, id) = (state.clone(), id.clone());
        blocking(move || load_design_for_job(&state, &id)).await?
    };
    let worker = state.clone();
    let design_id = id.clone();
    let job = state.inner.jobs.submit(JobKind::Generate, &id, move |progress| {
        let meta = UniverseMeta::new(design_id, Utc::now());
        let universe = generate_universe_with_progress(&design, &config, worker.gateway(), meta, progress)
            .map_err(|e| job_failure(&e))?;
        persist(&worker, &universe)?;
        Ok(universe.id().to_string())
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn start_multiverse(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let config = config_from_overrides(&body)?;
    let design = {
        let (state, id) = (state.clone(), id.clone());
        blocking(move || load_design_for_job(&state, &id)).await?
    };
    let seed = config.rng_seed;
    let worker = state.clone();
    let design_id = id.clone();
    let job = state.inner.jobs.submit(JobKind::MultiverseCommunity, &id, move |progress| {
        let universe = multiverse_community_with_progress(
            &design_id,
            &design,
            &config,
            worker.gateway(),
            seed,
            Utc::now(),
            progress,
        )
        .map_err(|e| job_failure(&e))?;
        persist(&worker, &universe)?;
        Ok(universe.id().to_string())
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    state.inner.jobs.get(&id).map(Json).ok_or_else(|| ApiError::not_found(format!("job {id} not found")))
}

async fn get_universe(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Universe>> {
    blocking(move || Ok(Json(state.store().load_universe(&id)?))).await
}

#[derive(Deserialize)]
struct PageQuery {
    page: Option<usize>,
}

#[derive(Serialize)]
struct ThreadPage {
    page: usize,
    page_size: usize,
    total_threads: usize,
    total_pages: usize,
    threads: Vec<Thread>,
}

async fn list_threads(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PageQuery>,
) -> ApiResult<Json<ThreadPage>> {
    let page = q.page.unwrap_or(1);
    if page == 0 {
        return Err(ApiError::invalid("page numbers start at 1", vec!["page must be at least 1".into()]));
    }
    let universe = blocking(move || Ok(state.store().load_universe(&id)?)).await?;
    let total = universe.threads().len();
    let threads = universe.threads().iter().skip((page - 1) * PAGE_SIZE).take(PAGE_SIZE).cloned().collect();
    Ok(Json(ThreadPage {
        page,
        page_size: PAGE_SIZE,
        total_threads: total,
        total_pages: total.div_ceil(PAGE_SIZE),
        threads,
    }))
}

async fn list_branches(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<StoredBranch>>> {
    blocking(move || {
        state.store().load_universe(&id)?;
        Ok(Json(state.store().list_branches(&id)?))
    })
    .await
}

fn save_branch(state: &AppState, branch: Branch) -> ApiResult<StoredBranch> {
    let sequence = state.store().append_branch(&branch)?;
    Ok(StoredBranch { sequence, branch })
}

async fn whatif(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let spec: WhatIfSpec = parse_json(&body)?;
    let stored = blocking(move || {
        let universe = state.store().load_universe(&id)?;
        let mut rng = RngStream::new(fresh_seed());
        let branch = if spec.intervention_text.is_some() {
            whatif_intervention(&universe, &spec, state.gateway(), &mut rng)?
        } else {
            whatif_reply(&universe, &spec, state.gateway(), &mut rng)?
        };
        save_branch(&state, branch)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(stored)))
}

fn default_k() -> usize {
    DEFAULT_ALTERNATIVES
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ThreadMultiverseRequest {
    at_utterance_index: usize,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    seed: Option<u64>,
}

async fn thread_multiverse(
    State(state): State<AppState>,
    Path((id, tid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: ThreadMultiverseRequest = parse_json(&body)?;
    let stored = blocking(move || {
        let universe = state.store().load_universe(&id)?;
        let seed = req.seed.unwrap_or_else(fresh_seed);
        let branch = multiverse_thread(&universe, &tid, req.at_utterance_index, req.k, state.gateway(), seed)?;
        save_branch(&state, branch)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(stored)))
}
