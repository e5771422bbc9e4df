//! JSON-over-HTTP front end for [`SessionManager`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use super::SessionManager;
use crate::dialogue::Task;
use crate::error::Error;

pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

pub fn status_for(e: &Error) -> StatusCode {
    match e.code() {
        "invalid_input" | "empty_history" | "oversize_turn" | "schema_violation" => {
            StatusCode::BAD_REQUEST
        }
        "unknown_session" | "unknown_round" => StatusCode::NOT_FOUND,
        "turn_in_progress" => StatusCode::CONFLICT,
        "model_not_loaded" => StatusCode::SERVICE_UNAVAILABLE,
        "provider_timeout" => StatusCode::GATEWAY_TIMEOUT,
        "provider_rate_limited"
        | "provider_unavailable"
        | "provider_rejected"
        | "malformed_response" => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let stage = match &self.0 {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        };
        let body = json!({
            "error": {
                "code": self.0.code(),
                "message": self.0.to_string(),
                "stage": stage,
            }
        });
        (status_for(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError(Error::invalid(format!("request body: {e}"))))
}

#[derive(Deserialize)]
struct CreateSession {
    task: String,
}

#[derive(Deserialize)]
struct PostMessage {
    text: String,
}

#[derive(Deserialize)]
struct TraceQuery {
    round: Option<usize>,
}

async fn healthz(State(m): State<Arc<SessionManager>>) -> Json<Value> {
    Json(json!({ "status": "ok", "tasks": m.tasks() }))
}

async fn create_session(
    State(m): State<Arc<SessionManager>>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateSession = parse_body(&body)?;
    let task: Task = req.task.parse()?;
    let id = m.create_session(task)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": id, "task": task })),
    ))
}

async fn list_sessions(State(m): State<Arc<SessionManager>>) -> Json<Value> {
    Json(json!({ "sessions": m.list_sessions() }))
}

async fn get_session(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    Ok(Json(
        serde_json::to_value(m.get_session(&id)?).map_err(Error::from)?,
    ))
}

async fn post_message(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let req: PostMessage = parse_body(&body)?;
    let trace = tokio::task::spawn_blocking(move || m.post_user_message(&id, &req.text))
        .await
        .map_err(|e| ApiError(Error::invalid(format!("turn task failed: {e}"))))??;
    Ok(Json(serde_json::to_value(trace).map_err(Error::from)?))
}

async fn get_trace(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    Query(q): Query<TraceQuery>,
) -> ApiResult<Json<Value>> {
    let traces = m.get_trace(&id, q.round)?;
    let value = match q.round {
        Some(_) => serde_json::to_value(&traces[0]),
        None => serde_json::to_value(&traces),
    }
    .map_err(Error::from)?;
    Ok(Json(value))
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/trace", get(get_trace))
        .with_state(manager)
}

/// Serves until ctrl-c.
pub async fn serve(
    manager: Arc<SessionManager>,
    addr: std::net::SocketAddr,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
