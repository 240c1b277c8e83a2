//! HTTP routes. Errors are `{"error": {"code", "message", "diagnostics"?}}`.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use storygraph_core::kg::{serialize_graph, EditSet, NodeType};
use storygraph_core::pipeline::{export_json, export_text, Phase, PipelineError, StorySpec};
use tokio::sync::broadcast;

use crate::session::{pipeline_error_code, AppState, Job, Session, SubmitError};
use crate::StoreError;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    diagnostics: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            diagnostics: None,
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }

    fn busy() -> Self {
        Self::new(
            StatusCode::TOO_MANY_REQUESTS,
            "busy",
            "another operation is running on this session",
        )
    }

    fn wrong_phase(expected: &'static str, actual: Phase) -> Self {
        PipelineError::WrongPhase { expected, actual }.into()
    }

    /// A body that is not JSON is a 400; JSON of the wrong shape is a 422.
    fn body(e: serde_json::Error) -> Self {
        if e.is_syntax() || e.is_eof() {
            Self::new(StatusCode::BAD_REQUEST, "bad_request", format!("malformed JSON: {e}"))
        } else {
            Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.to_string())
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::WrongPhase { .. } | PipelineError::KgDisabled => StatusCode::CONFLICT,
            PipelineError::InvalidSpec(_) | PipelineError::Edit(_) => StatusCode::UNPROCESSABLE_ENTITY,
            PipelineError::Backend(_) | PipelineError::ExtractionEmpty | PipelineError::EmptyScene { .. } => {
                StatusCode::BAD_GATEWAY
            }
            PipelineError::Template(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let diagnostics = match &e {
            PipelineError::Edit(edit) => Some(json!([edit])),
            _ => None,
        };
        Self {
            status,
            code: pipeline_error_code(&e),
            message: e.to_string(),
            diagnostics,
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        tracing::error!(error = %e, "storage failure");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::Pipeline(e) => e.into(),
            SubmitError::Store(e) => e.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(d) = self.diagnostics {
            error["diagnostics"] = d;
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type App = State<Arc<AppState>>;

/// Body of `POST /sessions`. Omitted settings come from the service defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub title: String,
    #[serde(default)]
    pub genre: String,
    #[serde(default)]
    pub protagonists: String,
    #[serde(default)]
    pub description: String,
    pub type_set: Option<Vec<NodeType>>,
    pub scene_count: Option<u32>,
    pub kg_enabled: Option<bool>,
    pub query_cap: Option<usize>,
    pub edit_mode: Option<bool>,
    pub llm_cleanup: Option<bool>,
}

impl CreateSession {
    pub fn into_spec(self, app: &AppState) -> StorySpec {
        let d = &app.defaults;
        let mut spec = StorySpec::new(self.title);
        spec.genre = self.genre;
        spec.protagonists = self.protagonists;
        spec.description = self.description;
        spec.type_set = self.type_set.unwrap_or_else(|| d.type_set.clone());
        spec.scene_count = self.scene_count.unwrap_or(d.scene_count);
        spec.kg_enabled = self.kg_enabled.unwrap_or(true);
        spec.query_cap = self.query_cap.unwrap_or(d.query_cap);
        spec.edit_mode = self.edit_mode.unwrap_or(d.edit_mode);
        spec.llm_cleanup = self.llm_cleanup.unwrap_or(false);
        spec
    }
}

#[derive(Debug, Serialize)]
struct Created {
    id: String,
    #[serde(flatten)]
    phase: Phase,
}

fn session(app: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    app.get(id).ok_or_else(|| ApiError::not_found(id))
}

async fn create_session(State(app): App, body: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    let request: CreateSession = serde_json::from_slice(&body).map_err(ApiError::body)?;
    let spec = request.into_spec(&app);
    spec.validate()?;
    let session = app.create_session(spec)?;
    let guard = session.try_claim().expect("a new session is idle");
    app.spawn_job(Arc::clone(&session), Job::Drive, guard);
    Ok((
        StatusCode::CREATED,
        Json(Created {
            id: session.id.clone(),
            phase: Phase::Initializing,
        }),
    ))
}

async fn list_sessions(State(app): App) -> Json<Value> {
    Json(json!({ "sessions": app.session_ids() }))
}

async fn get_session(State(app): App, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(session(&app, &id)?.view()).into_response())
}

async fn get_graph(State(app): App, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let state = session(&app, &id)?.current_state();
    Ok(Json(json!({
        "graph": state.graph,
        "size": state.graph.len(),
        "text": serialize_graph(&state.graph),
    })))
}

async fn post_edits(State(app): App, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let session = session(&app, &id)?;
    let _guard = claim(&session, "awaiting_edit", awaiting)?;
    let edits: EditSet = serde_json::from_slice(&body).map_err(ApiError::body)?;
    let app2 = Arc::clone(&app);
    let s2 = Arc::clone(&session);
    let state = tokio::task::spawn_blocking(move || app2.submit_edits(&s2, &edits))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(json!({
        "graph": state.graph,
        "size": state.graph.len(),
        "text": serialize_graph(&state.graph),
    })))
}

/// Take the mutation slot of a session in an accepted phase. The phase is checked
/// before and after claiming: a request in the wrong phase is a 409 even while a job
/// runs, and a job that finished just before the claim is not missed.
fn claim(
    session: &Arc<Session>,
    expected: &'static str,
    accepts: fn(Phase) -> bool,
) -> ApiResult<crate::session::BusyGuard> {
    let phase = session.phase();
    if !accepts(phase) {
        return Err(ApiError::wrong_phase(expected, phase));
    }
    let guard = session.try_claim().ok_or_else(ApiError::busy)?;
    let phase = session.phase();
    if !accepts(phase) {
        return Err(ApiError::wrong_phase(expected, phase));
    }
    Ok(guard)
}

/// Claim the session, check it waits for input, and start `job`.
fn start_job(app: &Arc<AppState>, id: &str, job: Job, accepts: fn(Phase) -> bool) -> ApiResult<Response> {
    let session = session(app, id)?;
    let expected = match job {
        Job::Drive => "initializing or generating",
        _ => "awaiting_edit",
    };
    let guard = claim(&session, expected, accepts)?;
    app.spawn_job(Arc::clone(&session), job, guard);
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id, "accepted": true }))).into_response())
}

fn awaiting(phase: Phase) -> bool {
    matches!(phase, Phase::AwaitingEdit(_))
}

async fn post_regenerate(State(app): App, Path(id): Path<String>) -> ApiResult<Response> {
    start_job(&app, &id, Job::Regenerate, awaiting)
}

async fn post_advance(State(app): App, Path(id): Path<String>) -> ApiResult<Response> {
    start_job(&app, &id, Job::Advance, awaiting)
}

/// Restart generation after a failed job.
async fn post_resume(State(app): App, Path(id): Path<String>) -> ApiResult<Response> {
    start_job(&app, &id, Job::Drive, |p| {
        matches!(p, Phase::Initializing | Phase::Generating(_))
    })
}

async fn get_events(
    State(app): App,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    let session = session(&app, &id)?;
    let rx = session.subscribe();
    let first = serde_json::to_string(&session.view()).expect("views serialize");
    let initial = futures::stream::once(async move { Ok(SseEvent::default().event("snapshot").data(first)) });
    let updates = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(notice) => {
                    let data = serde_json::to_string(&notice).expect("notices serialize");
                    return Some((Ok(SseEvent::default().event(notice.kind).data(data)), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(futures::StreamExt::chain(initial, updates)).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn get_export(State(app): App, Path(id): Path<String>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let session = session(&app, &id)?;
    let format = q.format.as_deref().unwrap_or("text");
    if !matches!(format, "text" | "json") {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_request",
            format!("unknown export format {format:?}, expected text or json"),
        ));
    }
    let state = session.data().state.clone().ok_or_else(|| {
        ApiError::new(StatusCode::CONFLICT, "wrong_phase", "the session has not initialized yet")
    })?;
    Ok(match format {
        "json" => ([(header::CONTENT_TYPE, "application/json")], export_json(&state)).into_response(),
        _ => ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], export_text(&state)).into_response(),
    })
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/graph", get(get_graph))
        .route("/sessions/{id}/edits", post(post_edits))
        .route("/sessions/{id}/regenerate", post(post_regenerate))
        .route("/sessions/{id}/advance", post(post_advance))
        .route("/sessions/{id}/resume", post(post_resume))
        .route("/sessions/{id}/events", get(get_events))
        .route("/sessions/{id}/export", get(get_export))
        .fallback(fallback)
        .with_state(app)
}
