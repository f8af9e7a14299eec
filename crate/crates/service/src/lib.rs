//! HTTP interface to design sessions.
//!
//! Every response is computed from the session directories under a data
//! root, so restarting the service loses nothing. Learning and optimization
//! run on the blocking thread pool; clients poll `GET /sessions/{id}` until
//! the session waits for review.
//!
//! | Method | Path | |
//! |---|---|---|
//! | `POST` | `/sessions` | start a session from two manifests |
//! | `GET` | `/sessions` | list session ids |
//! | `GET` | `/sessions/{id}` | status view |
//! | `GET` | `/sessions/{id}/candidates` | candidates of the current iteration |
//! | `POST` | `/sessions/{id}/decision` | `{"decision": "approve" \| "reject"}` |
//! | `GET` | `/sessions/{id}/history` | every iteration record |
//! | `GET` | `/candidates/{id}.png` | 256x256 grayscale rendering |
//! | `GET` | `/candidates/{id}.csv` | raw values |
//!
//! Errors are JSON objects `{"error": ..., "detail": ...}`.

use std::collections::HashMap;
use std::io::Cursor;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::services::ServeDir;

use superpose::io::to_gray;
use superpose::rdsim::Observation;
use superpose::session::{Decision, IterationRecord, Session, SessionConfig, SessionError, SessionState};

/// Side of rendered candidate images.
pub const IMAGE_SIDE: u32 = 256;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    detail: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match &self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let body = ErrorBody {
            error,
            detail: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::NotFound(_) | SessionError::CandidateNotFound(_) => ApiError::NotFound(e.to_string()),
            SessionError::WrongState { .. } | SessionError::IterationCap(_) => ApiError::Conflict(e.to_string()),
            SessionError::Start(_) | SessionError::Usage(_) => ApiError::BadRequest(e.to_string()),
            SessionError::Io(_) => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    root: PathBuf,
    ui_dir: Option<PathBuf>,
    locks: Arc<Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>>,
}

impl AppState {
    /// Sessions live in `root`; `ui_dir`, if given, is served at `/`.
    pub fn new(root: impl Into<PathBuf>, ui_dir: Option<PathBuf>) -> Self {
        AppState {
            root: root.into(),
            ui_dir,
            locks: Arc::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn lock_for(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks
            .lock()
            .expect("lock table poisoned")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    /// Runs a busy session to its next review point in the background.
    fn spawn_run(&self, id: String) {
        let state = self.clone();
        tokio::spawn(async move {
            let lock = state.lock_for(&id);
            let _guard = lock.lock().await;
            let root = state.root.clone();
            let outcome = tokio::task::spawn_blocking(move || {
                let mut session = Session::load(&root, &id)?;
                session.run_until_blocked()?;
                Ok::<_, SessionError>(session)
            })
            .await;
            match outcome {
                Ok(Ok(s)) => log::info!("session {} is {}", s.id, s.state),
                Ok(Err(e)) => log::error!("session run failed: {e}"),
                Err(e) => log::error!("session worker panicked: {e}"),
            }
        });
    }

    /// Restarts work on every session left busy by a previous process.
    pub fn resume_all(&self) -> Result<usize, SessionError> {
        let mut n = 0;
        for id in Session::list(&self.root)? {
            if Session::load(&self.root, &id)?.state.is_busy() {
                self.spawn_run(id);
                n += 1;
            }
        }
        Ok(n)
    }

    fn load(&self, id: &str) -> Result<Session, ApiError> {
        Ok(Session::load(&self.root, id)?)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    /// Generated when absent.
    pub id: Option<String>,
    /// Positive manifest; relative paths resolve against the data root.
    pub positives: PathBuf,
    pub negatives: PathBuf,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DecisionBody {
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub id: String,
    pub png: String,
    pub csv: String,
    pub value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub number: usize,
    pub formula: String,
    pub negatives: usize,
    pub gamma: Option<f64>,
    pub p: Option<Vec<f64>>,
    pub candidates: usize,
    pub decision: Option<Decision>,
}

impl From<&IterationRecord> for IterationSummary {
    fn from(r: &IterationRecord) -> Self {
        IterationSummary {
            number: r.number,
            formula: r.formula.clone(),
            negatives: r.negatives,
            gamma: r.result.as_ref().map(|x| x.gamma),
            p: r.result.as_ref().map(|x| x.p_star.clone()),
            candidates: r.candidates.len(),
            decision: r.decision,
        }
    }
}

/// Status of a session as served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub state: SessionState,
    pub iteration: usize,
    pub gamma: Option<f64>,
    pub p: Option<Vec<f64>>,
    pub formula: Option<String>,
    pub candidates: Vec<CandidateView>,
    pub history: Vec<IterationSummary>,
    pub diagnostic: Option<String>,
}

fn candidate_views(session: &Session) -> Vec<CandidateView> {
    let Some(current) = session.current() else {
        return Vec::new();
    };
    current
        .candidates
        .iter()
        .map(|c| CandidateView {
            id: c.id.clone(),
            png: format!("/candidates/{}.png", c.id),
            csv: format!("/candidates/{}.csv", c.id),
            value: c.value,
            seed: c.seed,
        })
        .collect()
}

impl From<&Session> for SessionView {
    fn from(s: &Session) -> Self {
        let current = s.current();
        let result = current.and_then(|r| r.result.as_ref());
        SessionView {
            id: s.id.clone(),
            state: s.state,
            iteration: s.iteration,
            gamma: result.map(|r| r.gamma),
            p: result.map(|r| r.p_star.clone()),
            formula: current.map(|r| r.formula.clone()),
            candidates: candidate_views(s),
            history: s.iterations.iter().map(IterationSummary::from).collect(),
            diagnostic: s.diagnostic.clone(),
        }
    }
}

/// Upscales (or downscales) an observation's first channel to
/// `IMAGE_SIDE x IMAGE_SIDE` by nearest neighbor, with gray level
/// `round(255 y)`.
pub fn render_png(obs: &Observation) -> Result<Vec<u8>, image::ImageError> {
    let side = obs.side() as u64;
    let out = IMAGE_SIDE as u64;
    let img = GrayImage::from_fn(IMAGE_SIDE, IMAGE_SIDE, |x, y| {
        let i = (y as u64 * side / out) as usize;
        let j = (x as u64 * side / out) as usize;
        Luma([to_gray(obs.get(0, i, j))])
    });
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)?;
    Ok(bytes)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let Json(req) = body?;
    let id = req.id.clone().unwrap_or_else(new_id);
    let root = state.root.clone();
    let session = blocking(move || {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
        Ok(Session::start(
            &root,
            &id,
            &resolve(&req.positives),
            &resolve(&req.negatives),
            req.config,
        )?)
    })
    .await?;
    state.spawn_run(session.id.clone());
    Ok((StatusCode::CREATED, Json(SessionView::from(&session))))
}

fn new_id() -> String {
    use std::time::{SystemTime, UNIX_EPOCH};
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    format!("s{:x}", superpose::derive_seed(nanos as u64, std::process::id() as u64))
}

async fn list_sessions(State(state): State<AppState>) -> Result<Json<Vec<String>>, ApiError> {
    Ok(Json(Session::list(&state.root)?))
}

async fn get_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(SessionView::from(&state.load(&id)?)))
}

async fn get_candidates(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Vec<CandidateView>>, ApiError> {
    Ok(Json(candidate_views(&state.load(&id)?)))
}

async fn get_history(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Vec<IterationRecord>>, ApiError> {
    Ok(Json(state.load(&id)?.iterations))
}

async fn post_decision(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let Json(DecisionBody { decision }) = body?;
    state.load(&id)?;
    let lock = state.lock_for(&id);
    let Ok(guard) = lock.try_lock() else {
        return Err(ApiError::Conflict(format!("session '{id}' is busy")));
    };
    let root = state.root.clone();
    let sid = id.clone();
    let session = blocking(move || {
        let mut s = Session::load(&root, &sid)?;
        s.decide(decision)?;
        Ok(s)
    })
    .await?;
    drop(guard);
    if session.state.is_busy() {
        state.spawn_run(id);
    }
    Ok(Json(SessionView::from(&session)))
}

async fn get_candidate_file(
    State(state): State<AppState>,
    UrlPath(file): UrlPath<String>,
) -> Result<Response, ApiError> {
    let (cid, ext) = file
        .rsplit_once('.')
        .ok_or_else(|| ApiError::NotFound(format!("no candidate file '{file}'")))?;
    if ext != "png" && ext != "csv" {
        return Err(ApiError::NotFound(format!("no candidate file '{file}'")));
    }
    let sid = Session::session_of_candidate(cid)
        .ok_or_else(|| ApiError::NotFound(format!("candidate '{cid}' not found")))?
        .to_string();
    let session = state
        .load(&sid)
        .map_err(|_| ApiError::NotFound(format!("candidate '{cid}' not found")))?;
    let candidate = session
        .candidate(cid)
        .ok_or_else(|| ApiError::NotFound(format!("candidate '{cid}' not found")))?
        .clone();
    if ext == "csv" {
        let path = session.dir().join(&candidate.path);
        let bytes = tokio::fs::read(&path)
            .await
            .map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
        return Ok(([(header::CONTENT_TYPE, "text/csv")], bytes).into_response());
    }
    let cid = cid.to_string();
    let bytes = blocking(move || {
        let obs = session.load_candidate(&cid)?;
        render_png(&obs).map_err(|e| ApiError::Internal(e.to_string()))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn index() -> Html<&'static str> {
    Html(
        "<!doctype html><title>superpose</title>\
         <p>No review UI bundle is installed. The JSON API is under <code>/sessions</code>.</p>",
    )
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/candidates", get(get_candidates))
        .route("/sessions/{id}/decision", post(post_decision))
        .route("/sessions/{id}/history", get(get_history))
        .route("/candidates/{file}", get(get_candidate_file));
    let api = match &state.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    };
    api.with_state(state)
}

/// Serves until the process is stopped, first resuming any busy sessions.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    match state.resume_all() {
        Ok(n) if n > 0 => log::info!("resumed {n} busy session(s)"),
        Ok(_) => {}
        Err(e) => log::warn!("could not scan sessions: {e}"),
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
