//! HTTP surface exercised in-process through the router.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use dialcoord::dialogue::Task;
use dialcoord::pipeline::mock_pipeline;
use dialcoord::service::{router, SessionManager};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(manager: Arc<SessionManager>) -> axum::Router {
    router(manager)
}

fn esc_manager() -> Arc<SessionManager> {
    Arc::new(SessionManager::new(BTreeMap::from([(
        Task::Esc,
        Arc::new(mock_pipeline(Task::Esc, 8).unwrap()),
    )])))
}

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn assert_error(body: &Value, code: &str) {
    assert_eq!(body["error"]["code"], code, "{body}");
    assert!(body["error"]["message"]
        .as_str()
        .is_some_and(|m| !m.is_empty()));
    assert!(body["error"].get("stage").is_some());
}

#[tokio::test]
async fn conversation_over_http() {
    let app = app_with(esc_manager());

    let (s, health) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    assert_eq!(health["tasks"], json!(["esc"]));

    let (s, created) = call(&app, "POST", "/sessions", Some(json!({"task": "esc"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = created["session_id"].as_str().unwrap().to_string();

    for (round, text) in [
        (1, "I lost my job last week."),
        (2, "I can't sleep because of it."),
    ] {
        let (s, trace) = call(
            &app,
            "POST",
            &format!("/sessions/{id}/messages"),
            Some(json!({ "text": text })),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{trace}");
        assert_eq!(trace["round"], round);
        assert_eq!(trace["top_k"].as_array().unwrap().len(), 3);
        assert!(!trace["utterance"]["text"].as_str().unwrap().is_empty());
    }

    let (s, all) = call(&app, "GET", &format!("/sessions/{id}/trace"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(all.as_array().unwrap().len(), 2);

    let (s, one) = call(&app, "GET", &format!("/sessions/{id}/trace?round=2"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(one, all[1]);

    let (s, session) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(session["session_id"], id.as_str());

    let (s, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list["sessions"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn error_statuses_and_bodies() {
    let app = app_with(esc_manager());

    let (s, body) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&body, "unknown_session");

    let (s, body) = call(
        &app,
        "POST",
        "/sessions/nope/messages",
        Some(json!({"text": "hi"})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&body, "unknown_session");

    let (s, body) = call(&app, "POST", "/sessions", Some(json!({"task": "chess"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&body, "invalid_input");

    let (s, body) = call(&app, "POST", "/sessions", Some(json!({"wrong": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&body, "invalid_input");

    // A known task with no loaded pipeline.
    let (s, body) = call(&app, "POST", "/sessions", Some(json!({"task": "p4g"}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_error(&body, "model_not_loaded");

    let (_, created) = call(&app, "POST", "/sessions", Some(json!({"task": "esc"}))).await;
    let id = created["session_id"].as_str().unwrap();
    let (s, body) = call(&app, "GET", &format!("/sessions/{id}/trace?round=1"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_error(&body, "unknown_round");

    let (s, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/messages"),
        Some(json!({"text": "  "})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
    assert_error(&body, "invalid_input");
}

#[tokio::test]
async fn restart_from_event_log_keeps_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.ndjson");
    let pipelines =
        || BTreeMap::from([(Task::Esc, Arc::new(mock_pipeline(Task::Esc, 8).unwrap()))]);

    let app = app_with(Arc::new(
        SessionManager::with_log(pipelines(), &log).unwrap(),
    ));
    let (_, created) = call(&app, "POST", "/sessions", Some(json!({"task": "esc"}))).await;
    let id = created["session_id"].as_str().unwrap().to_string();
    call(
        &app,
        "POST",
        &format!("/sessions/{id}/messages"),
        Some(json!({"text": "My dog died."})),
    )
    .await;
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}/trace"), None).await;
    drop(app);

    let app = app_with(Arc::new(
        SessionManager::with_log(pipelines(), &log).unwrap(),
    ));
    let (s, after) = call(&app, "GET", &format!("/sessions/{id}/trace"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(before, after);
}
