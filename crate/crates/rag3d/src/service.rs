//! HTTP front end over the pipeline, sessions and evaluation jobs.
//!
//! Every endpoint except `GET /health` requires `Authorization: Bearer
//! <token>` when a token is configured. Errors are `{error, message}`
//! bodies. Turn endpoints answer 200 even when a stage failed; the failure
//! is part of the returned turn.

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rag3d_core::Mode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::App;
use crate::error::ErrorCode;
use crate::evaluation::{load_prompts, run_eval, EvalConfig, EvalOutput, EvalProgress};
use crate::retrieval::RetrievalError;
use crate::session::{GenerationTurn, SessionError, SessionManager, SessionSettings, SessionStore};
use crate::store::build_index;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error": self.code, "message": self.message})),
        )
            .into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::EmptyRequest => StatusCode::BAD_REQUEST,
            SessionError::NoPriorTurn => StatusCode::CONFLICT,
            SessionError::UnknownProvider(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::NotFound(_) | SessionError::InvalidId(_) => StatusCode::NOT_FOUND,
            SessionError::Store { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

enum ReportJob {
    Running(Arc<EvalProgress>),
    Complete(Box<EvalOutput>),
    Failed { code: String, message: String },
}

pub struct ServiceState {
    pub app: Arc<App>,
    pub sessions: Arc<SessionManager>,
    token: Option<String>,
    reports: Mutex<HashMap<String, ReportJob>>,
}

impl ServiceState {
    pub fn new(app: App) -> Arc<Self> {
        let app = Arc::new(app);
        let store = SessionStore::new(app.config.sessions_root.clone());
        let sessions = Arc::new(SessionManager::new(app.pipeline.clone(), store));
        let token = app.config.token.clone().filter(|t| !t.is_empty());
        Arc::new(Self {
            app,
            sessions,
            token,
            reports: Mutex::new(HashMap::new()),
        })
    }

    fn reports(&self) -> std::sync::MutexGuard<'_, HashMap<String, ReportJob>> {
        self.reports.lock().unwrap_or_else(|e| e.into_inner())
    }
}

type Shared = Arc<ServiceState>;

pub fn router(state: Shared) -> Router {
    let protected = Router::new()
        .route("/retrieve", post(retrieve))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/generate", post(generate))
        .route("/sessions/{id}/refine", post(refine))
        .route("/evaluate", post(evaluate))
        .route("/reports/{id}", get(get_report))
        .route("/index/rebuild", post(rebuild_index))
        .route("/assets/corpus/{*path}", get(corpus_asset))
        .route("/assets/sessions/{*path}", get(session_asset))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(health))
        .merge(protected)
        .with_state(state)
}

fn token_matches(expected: &str, headers: &HeaderMap) -> bool {
    let Some(given) = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
    else {
        return false;
    };
    // Length leaks, contents do not.
    given.len() == expected.len()
        && given
            .bytes()
            .zip(expected.bytes())
            .fold(0u8, |acc, (a, b)| acc | (a ^ b))
            == 0
}

async fn require_token(State(state): State<Shared>, req: Request, next: Next) -> Response {
    match &state.token {
        Some(expected) if !token_matches(expected, req.headers()) => ApiError::new(
            StatusCode::UNAUTHORIZED,
            "Unauthorized",
            "missing or incorrect bearer token",
        )
        .into_response(),
        _ => next.run(req).await,
    }
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(ApiError::internal)?
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    index_size: usize,
    corpus_size: usize,
    providers: Vec<String>,
}

async fn health(State(state): State<Shared>) -> Json<Health> {
    let index_size = state.app.index.len();
    Json(Health {
        status: if index_size == 0 { "degraded" } else { "ok" },
        index_size,
        corpus_size: state.app.corpus.corpus.len(),
        providers: state.app.gateway.provider_ids(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveRequest {
    query: String,
    k: Option<usize>,
}

fn asset_url(prefix: &str, relative: &str) -> String {
    format!("/assets/{prefix}/{}", relative.trim_start_matches('/'))
}

async fn retrieve(State(state): State<Shared>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: RetrieveRequest = parse_body(&body)?;
    let k = req.k.unwrap_or(state.app.config.generation.k);
    blocking(move || {
        let ctx = state
            .app
            .pipeline
            .retriever
            .retrieve(&req.query, k)
            .map_err(|e| {
                let status = match &e {
                    RetrievalError::EmptyQuery | RetrievalError::InvalidK => {
                        StatusCode::BAD_REQUEST
                    }
                    RetrievalError::EmptyIndex => StatusCode::SERVICE_UNAVAILABLE,
                    RetrievalError::Embed(_) => StatusCode::BAD_GATEWAY,
                    _ => StatusCode::INTERNAL_SERVER_ERROR,
                };
                ApiError::new(status, e.code(), e.to_string())
            })?;
        let hits: Vec<Value> = ctx
            .hits
            .iter()
            .map(|h| {
                json!({
                    "entry_id": h.entry.id,
                    "rank": h.hit.rank,
                    "score": h.hit.score,
                    "description": h.entry.description,
                    "image_url": asset_url("corpus", &h.entry.image_path),
                })
            })
            .collect();
        Ok(Json(
            json!({"query": ctx.query_text, "k": ctx.k, "hits": hits}),
        ))
    })
    .await
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct SettingsPatch {
    mode: Option<Mode>,
    k: Option<usize>,
    budget: Option<usize>,
    execute: Option<bool>,
    render: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    provider_id: String,
    mode: Option<Mode>,
    #[serde(default)]
    settings: SettingsPatch,
}

async fn create_session(
    State(state): State<Shared>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateSession = parse_body(&body)?;
    let defaults = &state.app.config.generation;
    let base = SessionSettings {
        k: defaults.k,
        budget: defaults.budget,
        ..SessionSettings::default()
    };
    let s = req.settings;
    let settings = SessionSettings {
        mode: req.mode.or(s.mode).unwrap_or(base.mode),
        k: s.k.unwrap_or(base.k),
        budget: s.budget.unwrap_or(base.budget),
        execute: s.execute.unwrap_or(base.execute),
        render: s.render.unwrap_or(base.render),
    };
    if settings.k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let session = blocking(move || Ok(state.sessions.create(&req.provider_id, settings)?)).await?;
    Ok((
        StatusCode::CREATED,
        Json(
            json!({"session_id": session.session_id, "provider_id": session.provider_id, "settings": session.settings}),
        ),
    ))
}

#[derive(Serialize)]
struct TurnRecord {
    #[serde(flatten)]
    turn: GenerationTurn,
    render_url: Option<String>,
}

impl TurnRecord {
    fn new(session_id: &str, turn: GenerationTurn) -> Self {
        let render_url = turn
            .render_path
            .as_deref()
            .map(|p| asset_url("sessions", &format!("{session_id}/{p}")));
        Self { turn, render_url }
    }
}

async fn get_session(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Value>> {
    blocking(move || {
        let session = state.sessions.get(&id)?;
        let turns: Vec<TurnRecord> = session
            .turns
            .iter()
            .cloned()
            .map(|t| TurnRecord::new(&id, t))
            .collect();
        Ok(Json(json!({
            "session_id": session.session_id,
            "provider_id": session.provider_id,
            "settings": session.settings,
            "turns": turns,
        })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateRequest {
    request: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RefineRequest {
    follow_up: String,
}

async fn generate(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<TurnRecord>> {
    let req: GenerateRequest = parse_body(&body)?;
    blocking(move || {
        let turn = state.sessions.generate(&id, &req.request)?;
        Ok(Json(TurnRecord::new(&id, turn)))
    })
    .await
}

async fn refine(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<TurnRecord>> {
    let req: RefineRequest = parse_body(&body)?;
    blocking(move || {
        let turn = state.sessions.refine(&id, &req.follow_up)?;
        Ok(Json(TurnRecord::new(&id, turn)))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateRequest {
    prompt_set_path: PathBuf,
    providers: Vec<String>,
    #[serde(default)]
    conditions: Option<Vec<Mode>>,
    #[serde(default)]
    workers: Option<usize>,
}

async fn evaluate(
    State(state): State<Shared>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: EvaluateRequest = parse_body(&body)?;
    if req.providers.is_empty() {
        return Err(ApiError::bad_request("providers is empty"));
    }
    let prompts = load_prompts(&req.prompt_set_path)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.code(), e.to_string()))?;
    for p in &req.providers {
        state
            .app
            .gateway
            .check_credentials(p)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.code(), e.to_string()))?;
    }
    let defaults = &state.app.config.generation;
    let cfg = EvalConfig {
        conditions: req
            .conditions
            .unwrap_or_else(|| vec![Mode::Base, Mode::Rag]),
        k: defaults.k,
        budget: defaults.budget,
        workers: req
            .workers
            .unwrap_or(state.app.config.executor.max_concurrent)
            .max(1),
    };
    if cfg.conditions.is_empty() {
        return Err(ApiError::bad_request("conditions is empty"));
    }
    let report_id = uuid::Uuid::new_v4().simple().to_string();
    let progress = Arc::new(EvalProgress::default());
    progress.total.store(
        prompts.len() * req.providers.len() * cfg.conditions.len(),
        Ordering::SeqCst,
    );
    state
        .reports()
        .insert(report_id.clone(), ReportJob::Running(progress.clone()));

    let job_state = state.clone();
    let id = report_id.clone();
    std::thread::spawn(move || {
        let out = job_state.app.config.reports_root.join(&id);
        let result = run_eval(
            &job_state.app.pipeline,
            job_state.app.scorer.as_deref(),
            &prompts,
            &req.providers,
            &cfg,
            &out,
            &progress,
        );
        let job = match result {
            Ok(output) => ReportJob::Complete(Box::new(output)),
            Err(e) => ReportJob::Failed {
                code: e.code().to_owned(),
                message: e.to_string(),
            },
        };
        job_state.reports().insert(id, job);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({"report_id": report_id}))))
}

async fn get_report(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Value>> {
    let reports = state.reports();
    match reports.get(&id) {
        None => Err(ApiError::not_found(format!("report `{id}` not found"))),
        Some(ReportJob::Running(p)) => Ok(Json(json!({
            "status": "running",
            "completed": p.completed.load(Ordering::SeqCst),
            "total": p.total.load(Ordering::SeqCst),
        }))),
        Some(ReportJob::Complete(out)) => Ok(Json(json!({
            "status": "complete",
            "report": out.report,
            "annotations": out.annotations,
            "scorer_ids": out.scorer_ids,
            "items": out.items.len(),
        }))),
        Some(ReportJob::Failed { code, message }) => Ok(Json(json!({
            "status": "failed",
            "error": code,
            "message": message,
        }))),
    }
}

async fn rebuild_index(State(state): State<Shared>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let app = &state.app;
        let index = build_index(&app.corpus.corpus, app.embedder.as_ref()).map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string())
        })?;
        crate::store::save_snapshot(&index, &app.config.index_snapshot).map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string())
        })?;
        let size = index.len();
        app.index.replace(index);
        Ok(Json(json!({"index_size": size})))
    })
    .await
}

/// Joins `relative` under `root`, refusing anything that could leave it.
fn scoped_path(root: &Path, relative: &str) -> Option<PathBuf> {
    let rel = Path::new(relative);
    if relative.contains('\\') || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    let root = root.canonicalize().ok()?;
    let full = root.join(rel).canonicalize().ok()?;
    (full.starts_with(&root) && full.is_file()).then_some(full)
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("json") => "application/json",
        Some("py") | Some("txt") => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

async fn serve_file(root: PathBuf, relative: String) -> ApiResult<Response> {
    let path = scoped_path(&root, &relative).ok_or_else(|| ApiError::not_found("no such asset"))?;
    let bytes = tokio::fs::read(&path).await.map_err(ApiError::internal)?;
    Ok((
        [(header::CONTENT_TYPE, content_type(&path))],
        Body::from(bytes),
    )
        .into_response())
}

async fn corpus_asset(
    State(state): State<Shared>,
    UrlPath(path): UrlPath<String>,
) -> ApiResult<Response> {
    serve_file(state.app.corpus.root.clone(), path).await
}

async fn session_asset(
    State(state): State<Shared>,
    UrlPath(path): UrlPath<String>,
) -> ApiResult<Response> {
    serve_file(state.app.config.sessions_root.clone(), path).await
}

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(state: Shared) -> std::io::Result<()> {
    let addr = state
        .app
        .config
        .bind_addr()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
