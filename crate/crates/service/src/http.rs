//! HTTP API and event stream.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use oscar_core::frames::ImageRef;
use oscar_core::recipe::parse_recipe;
use oscar_core::tracker::{PredictionLogEntry, ProgressState, TrackerConfig};

use crate::error::{ServiceError, ServiceResult};
use crate::qa::QAExchange;
use crate::session::{SessionEvent, SessionManager, SessionSnapshot, SessionSummary};

const MAX_BODY_BYTES: usize = 32 * 1024 * 1024;

type AppState = Arc<SessionManager>;

#[derive(Deserialize)]
#[serde(untagged)]
enum RecipeInput {
    Text(String),
    Json(serde_json::Value),
}

#[derive(Deserialize)]
struct CreateRequest {
    recipe: RecipeInput,
    #[serde(default)]
    config: Option<TrackerConfig>,
}

#[derive(Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: String,
}

#[derive(Deserialize)]
struct FrameRequest {
    t_s: f64,
    /// `{"b64", "format"}` or a `synthetic://` reference.
    image: ImageRef,
}

#[derive(Deserialize)]
struct QuestionRequest {
    question: String,
    #[serde(default)]
    include_last_frame: bool,
}

#[derive(Serialize)]
struct PromptResponse {
    prompt: String,
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/sessions", post(create).get(list))
        .route("/v1/sessions/{id}", get(snapshot).delete(close))
        .route("/v1/sessions/{id}/frames", post(ingest))
        .route("/v1/sessions/{id}/progress", get(progress))
        .route("/v1/sessions/{id}/questions", post(question))
        .route("/v1/sessions/{id}/prompt", post(prompt))
        .route("/v1/sessions/{id}/events", get(events))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(manager)
}

async fn create(State(m): State<AppState>, Json(req): Json<CreateRequest>) -> ServiceResult<impl IntoResponse> {
    let raw = match req.recipe {
        RecipeInput::Text(t) => t,
        RecipeInput::Json(v) => v.to_string(),
    };
    let recipe = parse_recipe(&raw)?;
    let id = m.create_session(recipe, req.config).await?;
    Ok((StatusCode::CREATED, Json(CreateResponse { id })))
}

async fn list(State(m): State<AppState>) -> Json<Vec<SessionSummary>> {
    Json(m.summaries().await)
}

async fn snapshot(State(m): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<SessionSnapshot>> {
    Ok(Json(m.snapshot(&id).await?))
}

async fn close(State(m): State<AppState>, Path(id): Path<String>) -> ServiceResult<StatusCode> {
    m.close(&id).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn ingest(
    State(m): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<FrameRequest>,
) -> ServiceResult<Json<PredictionLogEntry>> {
    if !req.t_s.is_finite() || req.t_s < 0.0 {
        return Err(ServiceError::BadRequest(format!("invalid t_s {}", req.t_s)));
    }
    Ok(Json(m.ingest_frame(&id, req.image, req.t_s).await?))
}

async fn progress(State(m): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<ProgressState>> {
    Ok(Json(m.get_progress(&id).await?))
}

async fn question(
    State(m): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<QuestionRequest>,
) -> ServiceResult<Json<QAExchange>> {
    Ok(Json(m.ask_question(&id, &req.question, req.include_last_frame).await?))
}

async fn prompt(
    State(m): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<QuestionRequest>,
) -> ServiceResult<Json<PromptResponse>> {
    let prompt = m.qa_prompt(&id, &req.question, req.include_last_frame).await?;
    Ok(Json(PromptResponse { prompt }))
}

fn to_sse(event: &SessionEvent) -> Event {
    let data = match event {
        SessionEvent::Snapshot(s) => serde_json::to_string(s),
        SessionEvent::Progress { seq, entry } => serde_json::to_string(&serde_json::json!({"seq": seq, "entry": entry})),
        SessionEvent::Qa { seq, exchange } => {
            serde_json::to_string(&serde_json::json!({"seq": seq, "exchange": exchange}))
        }
        SessionEvent::Closed => Ok("{}".to_string()),
    }
    .expect("events serialize");
    Event::default().event(event.name()).data(data)
}

async fn events(
    State(m): State<AppState>,
    Path(id): Path<String>,
) -> ServiceResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let (snap, rx) = m.subscribe(&id).await?;
    let closed = snap.closed;
    let first = stream::once(async move { to_sse(&SessionEvent::Snapshot(Box::new(snap))) });
    let rest = stream::unfold((rx, m, id, closed), |(mut rx, m, id, done)| async move {
        if done {
            return None;
        }
        match rx.recv().await {
            Ok(e @ SessionEvent::Closed) => Some((to_sse(&e), (rx, m, id, true))),
            Ok(e) => Some((to_sse(&e), (rx, m, id, false))),
            // A subscriber that fell behind is resynchronized with a fresh snapshot.
            Err(RecvError::Lagged(_)) => {
                let (snap, rx) = m.subscribe(&id).await.ok()?;
                let done = snap.closed;
                Some((to_sse(&SessionEvent::Snapshot(Box::new(snap))), (rx, m, id, done)))
            }
            Err(RecvError::Closed) => None,
        }
    });
    Ok(Sse::new(first.chain(rest).map(Ok)).keep_alive(KeepAlive::default()))
}
