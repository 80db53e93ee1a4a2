use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use vitalink::server::{IngestResponse, MedicalServer, ServerError, SessionUpload};

type Shared = Arc<MedicalServer>;

pub fn router(server: Shared) -> Router {
    Router::new()
        .route("/v1/ingest", post(ingest))
        .route("/v1/patients/{id}/status", get(status))
        .route("/v1/patients/{id}/history", get(history))
        .route("/v1/alerts", get(alerts))
        .with_state(server)
}

/// Serves until `shutdown` resolves, then finishes in-flight requests.
pub async fn serve(listener: TcpListener, server: Shared, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(server)).with_graceful_shutdown(shutdown).await
}

fn error(code: StatusCode, message: impl ToString) -> Response {
    (code, Json(json!({ "error": message.to_string() }))).into_response()
}

fn server_error(e: ServerError) -> Response {
    let code = match &e {
        ServerError::Unauthorized => StatusCode::UNAUTHORIZED,
        ServerError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ServerError::NotFound(_) => StatusCode::NOT_FOUND,
        ServerError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
    };
    if code.is_server_error() {
        tracing::error!("{e}");
    }
    error(code, e)
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let token = value.strip_prefix("Bearer ")?.trim();
    (!token.is_empty()).then(|| token.to_owned())
}

async fn ingest(State(server): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let Some(token) = bearer(&headers) else {
        return error(StatusCode::UNAUTHORIZED, "missing bearer token");
    };
    if server.authenticate(&token).is_err() {
        return server_error(ServerError::Unauthorized);
    }
    let upload: SessionUpload = match serde_json::from_slice(&body) {
        Ok(u) => u,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e),
    };
    // Ingest syncs to disk before returning; keep it off the async workers.
    let result = tokio::task::spawn_blocking(move || server.ingest(&token, &upload)).await;
    match result {
        Ok(Ok(outcome)) => Json(IngestResponse::from(&outcome)).into_response(),
        Ok(Err(e)) => server_error(e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn status(State(server): State<Shared>, Path(id): Path<String>) -> Response {
    match server.get_status(&id) {
        Ok(snap) => Json(snap).into_response(),
        Err(e) => server_error(e),
    }
}

#[derive(Deserialize)]
struct Range {
    from_ms: Option<u64>,
    to_ms: Option<u64>,
}

async fn history(State(server): State<Shared>, Path(id): Path<String>, Query(r): Query<Range>) -> Response {
    match server.query_history(&id, r.from_ms.unwrap_or(0), r.to_ms.unwrap_or(u64::MAX)) {
        Ok(entries) => Json(entries).into_response(),
        Err(e) => server_error(e),
    }
}

#[derive(Deserialize)]
struct Since {
    since_ms: Option<u64>,
}

async fn alerts(State(server): State<Shared>, Query(q): Query<Since>) -> Response {
    Json(server.alerts_since(q.since_ms.unwrap_or(0))).into_response()
}
