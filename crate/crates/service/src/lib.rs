//! HTTP labeling service.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/sessions` | [`CreateSession`] |
//! | GET | `/sessions/{id}/query?timeout=secs` | |
//! | POST | `/sessions/{id}/label` | `{"index": i, "label": ±1}` |
//! | GET | `/sessions/{id}/model` | |
//!
//! Errors are `{"error": code, "message": text}`. Each session is driven by
//! one writer; round solves run on the blocking pool after creation and
//! after the last label of a round, and `query` waits for them.

pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

pub use session::{CreateSession, LabelAck, LabelEvent, ModelState, QueryResponse, SessionCore, SessionData, Status};
use session::{SessionError, REQUEST_FILE};

/// Default wait of `GET /query` for a pending solve.
pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), error: code.into(), message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::Invalid(_) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", message),
            SessionError::Conflict { .. } => ApiError::new(StatusCode::CONFLICT, "conflict", message),
            SessionError::NoPending => ApiError::new(StatusCode::CONFLICT, "invalid_state", message),
            SessionError::Failed(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "solver_failed", message),
            SessionError::Io(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

struct Handle {
    core: Mutex<SessionCore>,
    /// Bumped after every finished solve.
    solved: watch::Sender<u64>,
}

pub struct AppState {
    data_dir: PathBuf,
    sessions: tokio::sync::Mutex<HashMap<String, Arc<Handle>>>,
}

impl AppState {
    pub fn new(data_dir: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(AppState { data_dir: data_dir.into(), sessions: tokio::sync::Mutex::new(HashMap::new()) })
    }

    /// In-memory session, or one replayed from disk.
    async fn handle(&self, id: &str) -> Result<Arc<Handle>, ApiError> {
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        if !valid {
            return Err(ApiError::not_found(id));
        }
        let mut sessions = self.sessions.lock().await;
        if let Some(h) = sessions.get(id) {
            return Ok(h.clone());
        }
        let dir = self.data_dir.join(id);
        if !dir.join(REQUEST_FILE).is_file() {
            return Err(ApiError::not_found(id));
        }
        let sid = id.to_string();
        let core = tokio::task::spawn_blocking(move || SessionCore::replay(sid, dir))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
        log::info!("replayed session {id} at round {}", core.round());
        let handle = Arc::new(Handle { core: Mutex::new(core), solved: watch::channel(0).0 });
        sessions.insert(id.to_string(), handle.clone());
        schedule_solve(&handle);
        Ok(handle)
    }
}

/// Starts the current round's solve when one is needed.
fn schedule_solve(handle: &Arc<Handle>) {
    let (snapshot, round) = {
        let core = handle.core.lock().expect("session lock");
        if !core.needs_solve() {
            return;
        }
        (core.snapshot(), core.round())
    };
    let handle = handle.clone();
    tokio::task::spawn_blocking(move || {
        let solved = snapshot.solve_round(true);
        if let Err(e) = &solved {
            log::warn!("round {round} solve failed: {e}");
        }
        handle.core.lock().expect("session lock").install(round, solved);
        handle.solved.send_modify(|v| *v += 1);
    });
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", get(next_query))
        .route("/sessions/{id}/label", post(submit_label))
        .route("/sessions/{id}/model", get(model_state))
        .with_state(state)
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub round: usize,
    pub rounds: usize,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<Created>), ApiError> {
    let request: CreateSession = parse_body(&body)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let dir = state.data_dir.join(&id);
    let sid = id.clone();
    let core = tokio::task::spawn_blocking(move || -> Result<SessionCore, SessionError> {
        let core = SessionCore::create(sid, request, dir)?;
        core.persist_new()?;
        Ok(core)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let created = Created { id: id.clone(), round: core.round(), rounds: core.request.rounds };
    let handle = Arc::new(Handle { core: Mutex::new(core), solved: watch::channel(0).0 });
    state.sessions.lock().await.insert(id, handle.clone());
    schedule_solve(&handle);
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Deserialize)]
struct QueryParams {
    /// Seconds to wait for a pending solve.
    timeout: Option<f64>,
}

async fn next_query(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<QueryParams>,
) -> Result<Json<QueryResponse>, ApiError> {
    let handle = state.handle(&id).await?;
    let wait = params
        .timeout
        .filter(|t| t.is_finite() && *t >= 0.0)
        .map_or(DEFAULT_QUERY_TIMEOUT, Duration::from_secs_f64);
    let deadline = tokio::time::Instant::now() + wait;
    loop {
        let mut rx = {
            let mut core = handle.core.lock().expect("session lock");
            if core.status() != Status::Solving {
                return Ok(Json(core.next_query()?));
            }
            handle.solved.subscribe()
        };
        if tokio::time::timeout_at(deadline, rx.changed()).await.is_err() {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "solve_pending",
                format!("round solve still running after {:.1} s", wait.as_secs_f64()),
            ));
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub index: usize,
    pub label: i8,
}

async fn submit_label(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<LabelAck>, ApiError> {
    let req: LabelRequest = parse_body(&body)?;
    let handle = state.handle(&id).await?;
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
    let ack = {
        let mut core = handle.core.lock().expect("session lock");
        core.submit(req.index, req.label, now)?;
        LabelAck { round: core.round(), labels: core.events().len(), status: core.status() }
    };
    schedule_solve(&handle);
    Ok(Json(ack))
}

async fn model_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<ModelState>, ApiError> {
    let handle = state.handle(&id).await?;
    let snapshot = handle.core.lock().expect("session lock").model_state();
    Ok(Json(snapshot))
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, data_dir: PathBuf) -> std::io::Result<()> {
    std::fs::create_dir_all(&data_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(data_dir))).await
}
