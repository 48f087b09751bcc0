//! HTTP service hosting agent sessions for the web console.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use econ_agent::{create_session, AgentError, EventKind, Session, SessionConfig, StepEvent};
use econ_core::data::{load_csv, CsvOptions};
use econ_core::tools::Registry;
use futures::stream::{self, Stream};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::broadcast;

pub const UPLOAD_LIMIT: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Uploaded datasets land here; relative data paths in messages resolve here.
    pub data_dir: PathBuf,
    pub max_sessions: usize,
    /// Template for every new session (backend, retries, ...).
    pub session: SessionConfig,
    /// Written on shutdown with each session's plan, history and events.
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {reason}")]
    BindFailure { addr: SocketAddr, reason: String },
    #[error("invalid server configuration: {0}")]
    Config(String),
    #[error("server error: {0}")]
    Io(String),
}

struct Slot {
    session: Arc<tokio::sync::Mutex<Session>>,
    log: Arc<Mutex<Vec<StepEvent>>>,
    tx: broadcast::Sender<StepEvent>,
}

struct Inner {
    config: ServerConfig,
    sessions: Mutex<BTreeMap<String, Arc<Slot>>>,
    registry: Registry,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("no session '{id}'"))
}

impl AppState {
    pub fn new(config: ServerConfig) -> Result<Self, ServerError> {
        if config.max_sessions == 0 {
            return Err(ServerError::Config("max sessions must be at least 1".into()));
        }
        std::fs::create_dir_all(&config.data_dir)
            .map_err(|e| ServerError::Config(format!("{}: {e}", config.data_dir.display())))?;
        Ok(Self {
            inner: Arc::new(Inner { config, sessions: Mutex::new(BTreeMap::new()), registry: Registry::builtin() }),
        })
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Slot>> {
        self.inner.sessions.lock().expect("session map").get(id).cloned().ok_or_else(|| not_found(id))
    }

    /// Plans, histories and event logs of every session.
    pub fn snapshot(&self) -> Value {
        let sessions = self.inner.sessions.lock().expect("session map");
        let mut out = serde_json::Map::new();
        for (id, slot) in sessions.iter() {
            let events = slot.log.lock().expect("event log").clone();
            let (plan, history) = match slot.session.try_lock() {
                Ok(s) => (json!(s.plan()), json!(s.memory.history)),
                Err(_) => (Value::Null, Value::Null),
            };
            out.insert(id.clone(), json!({"plan": plan, "history": history, "events": events}));
        }
        Value::Object(out)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/messages", post(message))
        .route("/sessions/{id}/plan", get(plan))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/events/poll", get(poll))
        .route("/sessions/{id}/result", get(result))
        .route("/datasets", post(upload))
        .route("/tools", get(tools))
        .layer(DefaultBodyLimit::max(UPLOAD_LIMIT))
        .with_state(state)
}

async fn create(State(state): State<AppState>) -> ApiResult<(StatusCode, Json<Value>)> {
    let config = SessionConfig { data_dir: state.inner.config.data_dir.clone(), ..state.inner.config.session.clone() };
    let mut session =
        create_session(config).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let (tx, _) = broadcast::channel(1024);
    let log = Arc::new(Mutex::new(Vec::new()));
    let (sink_log, sink_tx) = (Arc::clone(&log), tx.clone());
    session.set_event_sink(Arc::new(move |e: &StepEvent| {
        sink_log.lock().expect("event log").push(e.clone());
        let _ = sink_tx.send(e.clone());
    }));
    let id = session.id.clone();
    let mut sessions = state.inner.sessions.lock().expect("session map");
    if sessions.len() >= state.inner.config.max_sessions {
        return Err(ApiError(StatusCode::SERVICE_UNAVAILABLE, "session limit reached".into()));
    }
    sessions.insert(id.clone(), Arc::new(Slot { session: Arc::new(tokio::sync::Mutex::new(session)), log, tx }));
    Ok((StatusCode::CREATED, Json(json!({"id": id}))))
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

/// Runs one message to completion: the first starts a request, later ones
/// are follow-ups. Messages to the same session queue behind each other.
async fn message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<MessageBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let slot = state.slot(&id)?;
    let Json(body) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let text = body.text.trim().to_string();
    if text.is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "message text is empty".into()));
    }
    let guard = Arc::clone(&slot.session).lock_owned().await;
    let answer = tokio::task::spawn_blocking(move || {
        let mut session = guard;
        let value = if session.plan().is_none() {
            session.run_request(&text).map(|outcome| json!({"intent": null, "rerun": null, "outcome": outcome}))
        } else {
            session.handle_followup(&text).map(|r| json!({"intent": r.intent, "rerun": r.rerun, "outcome": r.outcome}))
        };
        value.map(|mut v| {
            v["accepted"] = json!(true);
            v["plan"] = json!(session.plan());
            v
        })
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("run aborted: {e}")))?;
    match answer {
        Ok(v) => Ok(Json(v)),
        Err(AgentError::Busy) => Err(ApiError(StatusCode::CONFLICT, AgentError::Busy.to_string())),
        Err(e) => Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())),
    }
}

async fn plan(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = state.slot(&id)?;
    let value = match slot.session.try_lock() {
        Ok(s) => json!({"status": s.status, "plan": s.plan()}),
        Err(_) => {
            let log = slot.log.lock().expect("event log");
            let latest = log.iter().rev().find(|e| e.kind == EventKind::PlanUpdated).map(|e| e.payload.clone());
            json!({"status": "running", "plan": latest})
        }
    };
    Ok(Json(value))
}

async fn result(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let session = slot
        .session
        .try_lock()
        .map_err(|_| ApiError(StatusCode::CONFLICT, "a message is still running".into()))?;
    let report = session.last_report().ok_or_else(|| ApiError(StatusCode::NOT_FOUND, "no result yet".into()))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], report.json_text.clone()).into_response())
}

#[derive(Deserialize)]
struct After {
    after: Option<u64>,
}

fn resume_point(query: &After, headers: &HeaderMap) -> u64 {
    query.after.unwrap_or_else(|| {
        headers
            .get("last-event-id")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    })
}

fn sse_event(e: &StepEvent) -> Event {
    let name = serde_json::to_value(e).ok().and_then(|v| v["event"].as_str().map(str::to_string)).unwrap_or_default();
    Event::default().id(e.seq.to_string()).event(name).data(serde_json::to_string(e).unwrap_or_default())
}

/// Server-sent events: the log after `after` (or `Last-Event-ID`), then live events.
async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<After>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let slot = state.slot(&id)?;
    let after = resume_point(&query, &headers);
    let rx = slot.tx.subscribe();
    let backlog: Vec<StepEvent> = slot.log.lock().expect("event log").iter().filter(|e| e.seq > after).cloned().collect();
    let last = backlog.last().map_or(after, |e| e.seq);
    let replay = stream::iter(backlog.into_iter().map(|e| Ok(sse_event(&e))));
    let live = stream::unfold((rx, last), |(mut rx, last)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if e.seq > last => {
                    let seq = e.seq;
                    return Some((Ok(sse_event(&e)), (rx, seq)));
                }
                Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(futures::StreamExt::chain(replay, live)).keep_alive(KeepAlive::default()))
}

/// Polling fallback for clients without event-stream support.
async fn poll(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<After>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<StepEvent>>> {
    let slot = state.slot(&id)?;
    let after = resume_point(&query, &headers);
    let log = slot.log.lock().expect("event log");
    Ok(Json(log.iter().filter(|e| e.seq > after).cloned().collect()))
}

fn clean_file_name(raw: &str) -> Option<String> {
    let base = raw.rsplit(['/', '\\']).next()?.trim();
    let name: String =
        base.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect();
    let stem_ok = name.trim_start_matches('.').len() > 4;
    (name.to_ascii_lowercase().ends_with(".csv") && stem_ok).then_some(name)
}

/// Stores an uploaded CSV under the data directory, checking that it parses.
async fn upload(State(state): State<AppState>, mut multipart: Multipart) -> ApiResult<(StatusCode, Json<Value>)> {
    let bad = |code: StatusCode, msg: String| ApiError(code, msg);
    while let Some(field) = multipart.next_field().await.map_err(|e| bad(StatusCode::BAD_REQUEST, e.body_text()))? {
        let Some(raw_name) = field.file_name().map(str::to_string) else { continue };
        let name = clean_file_name(&raw_name)
            .ok_or_else(|| bad(StatusCode::UNSUPPORTED_MEDIA_TYPE, format!("'{raw_name}' is not a .csv file")))?;
        let bytes = field.bytes().await.map_err(|e| bad(StatusCode::PAYLOAD_TOO_LARGE, e.body_text()))?;
        let path = state.inner.config.data_dir.join(&name);
        let checked = tokio::task::spawn_blocking(move || {
            std::fs::write(&path, &bytes).map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            match load_csv(&path, &CsvOptions::default()) {
                Ok(t) => Ok((t.row_count(), t.column_names().iter().map(|c| c.to_string()).collect::<Vec<_>>())),
                Err(e) => {
                    let _ = std::fs::remove_file(&path);
                    Err((StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
                }
            }
        })
        .await
        .map_err(|e| bad(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let (rows, columns) = checked.map_err(|(c, m)| bad(c, m))?;
        return Ok((StatusCode::CREATED, Json(json!({"name": name, "rows": rows, "columns": columns}))));
    }
    Err(bad(StatusCode::BAD_REQUEST, "no file field in upload".into()))
}

async fn tools(State(state): State<AppState>) -> Json<Value> {
    let list: Vec<Value> = state
        .inner
        .registry
        .descriptors()
        .map(|d| json!({"name": d.name, "version": d.version, "summary": d.summary}))
        .collect();
    Json(json!(list))
}

/// Serves until interrupted, then writes the snapshot if one is configured.
pub async fn serve(config: ServerConfig) -> Result<(), ServerError> {
    let addr = config.bind;
    let snapshot = config.snapshot.clone();
    let state = AppState::new(config)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServerError::BindFailure { addr, reason: e.to_string() })?;
    eprintln!("listening on {}", listener.local_addr().map_err(|e| ServerError::Io(e.to_string()))?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServerError::Io(e.to_string()))?;
    if let Some(path) = snapshot {
        let text = serde_json::to_string_pretty(&state.snapshot()).unwrap_or_default();
        std::fs::write(&path, text).map_err(|e| ServerError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
