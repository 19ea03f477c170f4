//! Shared helpers: in-process HTTP calls and script posting.

#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
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
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let json = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, json)
}

pub async fn open_session(app: &Router) -> String {
    let (status, body) = call(app, Method::POST, "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    body["session_id"].as_str().unwrap().to_string()
}

pub async fn say(app: &Router, session: &str, text: &str) -> (StatusCode, Value) {
    call(app, Method::POST, &format!("/sessions/{session}/statements"), Some(serde_json::json!({ "text": text }))).await
}

/// Posts every statement of a teaching script; stops at the first failure.
pub async fn post_script(app: &Router, session: &str, script: &str) -> Result<(), (String, Value)> {
    for line in script.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') || line.starts_with('@') {
            continue;
        }
        let (status, body) = say(app, session, line).await;
        if status != StatusCode::OK {
            return Err((line.to_string(), body));
        }
    }
    Ok(())
}
