//! HTTP teaching service.
//!
//! One knowledge base behind a single writer, any number of trainer
//! sessions. Statements go through the same [`Session::step`] call as the
//! command line, so both paths build identical knowledge bases.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use col_core::engine::{query_with, EngineError, FactSet, QueryMode, QueryOptions};
use col_core::graph::{FrameTable, GraphExport};
use col_core::teach::{KbDelta, MachineUtterance, Session, SessionError};
use col_core::{save_kb, DocError, KbError, SharedKb};
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Shared service state.
pub struct AppState {
    pub kb: SharedKb,
    sessions: Mutex<HashMap<String, Session>>,
    next_session: AtomicU64,
    /// Where `POST /kb/save` and closed sessions write the document.
    pub path: Option<PathBuf>,
}

impl AppState {
    pub fn new(kb: col_core::KnowledgeBase, path: Option<PathBuf>) -> Arc<Self> {
        Arc::new(AppState {
            kb: SharedKb::new(kb),
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            path,
        })
    }

    /// Writes the current knowledge base to [`path`](Self::path).
    pub fn persist(&self) -> Result<Option<PathBuf>, DocError> {
        let Some(path) = &self.path else { return Ok(None) };
        let kb = self.kb.read();
        save_kb(&kb, path)?;
        Ok(Some(path.clone()))
    }
}

/// Error body: `{"error": {"kind", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError { status, kind: kind.into(), message: message.into() }
    }

    fn body(&self) -> serde_json::Value {
        json!({ "kind": self.kind, "message": self.message })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.body() }))).into_response()
    }
}

/// Leading identifier of a `Debug` rendering, used as a stable error kind.
fn variant_name(debug: String) -> String {
    debug.split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default().to_string()
}

fn kb_status(e: &KbError) -> StatusCode {
    match e {
        KbError::UnknownConcept(_)
        | KbError::UnknownClass { .. }
        | KbError::UnknownFeature(_)
        | KbError::UnknownValue { .. }
        | KbError::UnknownFrame(_)
        | KbError::UnknownReference(_) => StatusCode::NOT_FOUND,
        KbError::ReciprocityConflict { .. }
        | KbError::DuplicateConcept(_)
        | KbError::DuplicateClass { .. }
        | KbError::DuplicateFeature(_)
        | KbError::DuplicateValue { .. }
        | KbError::DuplicateFrame(_)
        | KbError::DuplicateRule { .. }
        | KbError::InUse { .. }
        | KbError::CyclicComposition { .. } => StatusCode::CONFLICT,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

fn engine_status(e: &EngineError) -> StatusCode {
    match e {
        EngineError::UnknownFrame(_) | EngineError::UnknownFeature(_) | EngineError::UnknownValue { .. } => {
            StatusCode::NOT_FOUND
        }
        EngineError::Inconsistent { .. } => StatusCode::CONFLICT,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<&SessionError> for ApiError {
    fn from(e: &SessionError) -> Self {
        let (status, kind) = match e {
            SessionError::Parse(_) => (StatusCode::BAD_REQUEST, "Parse".to_string()),
            SessionError::Protocol(_) => (StatusCode::BAD_REQUEST, "Protocol".to_string()),
            SessionError::Kb(k) => (kb_status(k), variant_name(format!("{k:?}"))),
            SessionError::Engine(g) => (engine_status(g), variant_name(format!("{g:?}"))),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl From<DocError> for ApiError {
    fn from(e: DocError) -> Self {
        let status = match e {
            DocError::Violations(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, variant_name(format!("{e:?}")), e.to_string())
    }
}

type Shared = Arc<AppState>;

/// Routes of the teaching service.
pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", delete(close_session))
        .route("/sessions/{id}/statements", post(statement))
        .route("/kb/graph", get(graph))
        .route("/kb/query", post(run_query))
        .route("/kb/frames/{name}", get(frame))
        .route("/kb/save", post(save))
        .with_state(state)
}

async fn create_session(State(app): State<Shared>) -> (StatusCode, Json<serde_json::Value>) {
    let id = format!("s{}", app.next_session.fetch_add(1, Ordering::Relaxed));
    app.sessions.lock().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), Session::new(id.clone()));
    (StatusCode::CREATED, Json(json!({ "session_id": id })))
}

async fn close_session(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let removed = app.sessions.lock().unwrap_or_else(|e| e.into_inner()).remove(&id);
    let session = removed.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session {id}")))?;
    let saved = app.persist()?;
    Ok(Json(json!({
        "session_id": session.id,
        "transcript": session.transcript,
        "saved_to": saved,
        "revision": app.kb.read().revision(),
    })))
}

#[derive(Deserialize)]
struct StatementBody {
    text: String,
}

/// Reply to one trainer statement.
#[derive(Debug, Serialize, Deserialize)]
pub struct StatementReply {
    pub machine_reply: MachineUtterance,
    pub kb_delta: KbDelta,
    pub revision: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<serde_json::Value>,
}

async fn statement(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<StatementBody>,
) -> Result<Response, ApiError> {
    let step = {
        let mut sessions = app.sessions.lock().unwrap_or_else(|e| e.into_inner());
        let session = sessions
            .get_mut(&id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session {id}")))?;
        app.kb.write(|kb| session.step(kb, &body.text))
    };
    let failure = step.error.as_ref().map(ApiError::from);
    let reply = StatementReply {
        machine_reply: step.reply,
        kb_delta: step.delta,
        revision: step.revision,
        error: failure.as_ref().map(ApiError::body),
    };
    let status = failure.map_or(StatusCode::OK, |f| f.status);
    Ok((status, Json(reply)).into_response())
}

async fn graph(State(app): State<Shared>) -> Json<GraphExport> {
    Json(GraphExport::from_kb(&app.kb.read()))
}

#[derive(Deserialize)]
struct QueryBody {
    #[serde(default)]
    facts: FactSet,
    goal: String,
    #[serde(default)]
    mode: QueryMode,
}

async fn run_query(State(app): State<Shared>, Json(body): Json<QueryBody>) -> Result<Response, ApiError> {
    let kb = app.kb.read();
    if kb.feature(&body.goal).is_none() {
        return Err(ApiError::from(&SessionError::Engine(EngineError::UnknownFeature(body.goal))));
    }
    body.facts.canonicalize(&kb).map_err(|e| ApiError::from(&SessionError::Engine(e)))?;
    let options = QueryOptions { mode: body.mode, ..QueryOptions::default() };
    Ok(Json(query_with(&kb, &body.facts, &body.goal, options)).into_response())
}

/// A frame table with its plain-text rendering.
#[derive(Debug, Serialize, Deserialize)]
pub struct FrameView {
    #[serde(flatten)]
    pub table: FrameTable,
    pub text: String,
}

async fn frame(State(app): State<Shared>, Path(name): Path<String>) -> Result<Json<FrameView>, ApiError> {
    let table = FrameTable::of(&app.kb.read(), &name)
        .ok_or_else(|| ApiError::from(&SessionError::Kb(KbError::UnknownFrame(name))))?;
    let text = table.render();
    Ok(Json(FrameView { table, text }))
}

async fn save(State(app): State<Shared>) -> Result<Json<serde_json::Value>, ApiError> {
    let saved = app
        .persist()?
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "NoPath", "the service has no document path"))?;
    Ok(Json(json!({ "saved_to": saved, "revision": app.kb.read().revision() })))
}

/// Serves `state` on `addr` until ctrl-c, then saves the knowledge base.
pub async fn serve(state: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    state.persist().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(())
}
