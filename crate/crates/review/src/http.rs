//! HTTP interface. Every route lives under `/v1` and speaks JSON; errors
//! come back as `{"schema_version", "error", "message"}`.
//!
//! | method | path                                 | caller          |
//! |--------|--------------------------------------|-----------------|
//! | GET    | /v1/health                           | anyone          |
//! | GET    | /v1/sessions                         | admin           |
//! | POST   | /v1/sessions                         | admin           |
//! | GET    | /v1/sessions/{id}                    | admin, member   |
//! | GET    | /v1/sessions/{id}/next               | member          |
//! | POST   | /v1/sessions/{id}/annotations        | member          |
//! | POST   | /v1/sessions/{id}/reconciliation     | admin, member   |
//! | GET    | /v1/sessions/{id}/reconciliation     | admin, member   |
//! | POST   | /v1/sessions/{id}/resolutions        | admin, member   |
//! | POST   | /v1/sessions/{id}/close              | admin, member   |
//! | GET    | /v1/sessions/{id}/export             | admin, member   |
//!
//! A member is an annotator listed on the session, identified by the bearer
//! token configured for them.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use labelaudit::config::ReviewConfig;
use labelaudit::flagging::SCHEMA_VERSION;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::ReviewError;
use crate::service::ReviewService;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Caller {
    Admin,
    Annotator(String),
}

/// Bearer tokens: one for session management plus one per annotator.
#[derive(Debug, Clone)]
pub struct Auth {
    admin: String,
    annotators: HashMap<String, String>,
}

impl Auth {
    pub fn new(admin: impl Into<String>, annotators: impl IntoIterator<Item = (String, String)>) -> Self {
        Auth {
            admin: admin.into(),
            annotators: annotators.into_iter().map(|(id, token)| (token, id)).collect(),
        }
    }

    pub fn from_config(cfg: &ReviewConfig) -> Self {
        Auth::new(
            cfg.admin_token.clone(),
            cfg.annotators.iter().map(|a| (a.id.clone(), a.token.clone())),
        )
    }

    fn caller(&self, headers: &HeaderMap) -> Result<Caller, ReviewError> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ReviewError::Unauthorized)?;
        if token == self.admin {
            return Ok(Caller::Admin);
        }
        self.annotators
            .get(token)
            .map(|id| Caller::Annotator(id.clone()))
            .ok_or(ReviewError::Unauthorized)
    }
}

#[derive(Clone)]
struct AppState {
    service: Arc<ReviewService>,
    auth: Arc<Auth>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    schema_version: u32,
    error: &'static str,
    message: String,
}

pub fn status_of(e: &ReviewError) -> StatusCode {
    match e {
        ReviewError::Unauthorized => StatusCode::UNAUTHORIZED,
        ReviewError::Forbidden(_) | ReviewError::UnknownAnnotator { .. } => StatusCode::FORBIDDEN,
        ReviewError::SessionNotFound(_) => StatusCode::NOT_FOUND,
        ReviewError::SessionExists(_)
        | ReviewError::WrongPhase { .. }
        | ReviewError::Incomplete { .. }
        | ReviewError::Unresolved { .. } => StatusCode::CONFLICT,
        ReviewError::UnknownExample(_) | ReviewError::NotADisagreement(_) | ReviewError::Invalid(_) => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        ReviewError::CorruptLog { .. } | ReviewError::Core(_) | ReviewError::Io(_) | ReviewError::Json(_) => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
    }
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let status = status_of(&self);
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = ErrorBody {
            schema_version: SCHEMA_VERSION,
            error: self.code(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ReviewError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ReviewError> {
    serde_json::from_slice(body).map_err(|e| ReviewError::Invalid(e.to_string()))
}

/// Run blocking service work (log writes sync to disk) off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ReviewError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ReviewError::Io(std::io::Error::other(e.to_string())))?
        .map(Json)
}

impl AppState {
    fn admin(&self, headers: &HeaderMap, action: &'static str) -> Result<(), ReviewError> {
        match self.auth.caller(headers)? {
            Caller::Admin => Ok(()),
            Caller::Annotator(_) => Err(ReviewError::Forbidden(action)),
        }
    }

    fn annotator(&self, headers: &HeaderMap, action: &'static str) -> Result<String, ReviewError> {
        match self.auth.caller(headers)? {
            Caller::Annotator(id) => Ok(id),
            Caller::Admin => Err(ReviewError::Forbidden(action)),
        }
    }

    /// Admin, or an annotator listed on the session.
    fn member(&self, headers: &HeaderMap, session: &str) -> Result<(), ReviewError> {
        match self.auth.caller(headers)? {
            Caller::Admin => Ok(()),
            Caller::Annotator(id) => {
                if self.service.annotators(session)?.contains(&id) {
                    Ok(())
                } else {
                    Err(ReviewError::UnknownAnnotator {
                        session: session.to_string(),
                        annotator: id,
                    })
                }
            }
        }
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "schema_version": SCHEMA_VERSION, "status": "ok" }))
}

async fn list_sessions(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Vec<crate::SessionStatus>> {
    s.admin(&headers, "list sessions")?;
    let svc = s.service.clone();
    blocking(move || svc.session_ids().iter().map(|id| svc.status(id)).collect()).await
}

async fn create_session(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<crate::SessionStatus>), ReviewError> {
    s.admin(&headers, "create sessions")?;
    let req = parse(&body)?;
    let svc = s.service.clone();
    let Json(status) = blocking(move || svc.create_session(req)).await?;
    Ok((StatusCode::CREATED, Json(status)))
}

async fn session_status(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<crate::SessionStatus> {
    s.member(&headers, &id)?;
    Ok(Json(s.service.status(&id)?))
}

async fn next_task(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<crate::NextTask> {
    let who = s.annotator(&headers, "annotate")?;
    Ok(Json(s.service.next_task(&id, &who)?))
}

async fn submit_annotation(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<crate::AnnotationAck> {
    let who = s.annotator(&headers, "annotate")?;
    let req = parse(&body)?;
    let svc = s.service.clone();
    blocking(move || svc.submit_annotation(&id, &who, req)).await
}

async fn open_reconciliation(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Vec<crate::ReconciliationItem>> {
    s.member(&headers, &id)?;
    let svc = s.service.clone();
    blocking(move || svc.open_reconciliation(&id)).await
}

async fn list_reconciliation(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Vec<crate::ReconciliationItem>> {
    s.member(&headers, &id)?;
    Ok(Json(s.service.reconciliation(&id)?))
}

async fn submit_resolution(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<crate::ReconciliationItem> {
    s.member(&headers, &id)?;
    let req = parse(&body)?;
    let svc = s.service.clone();
    blocking(move || svc.submit_resolution(&id, req)).await
}

async fn close_session(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<crate::Export> {
    s.member(&headers, &id)?;
    let svc = s.service.clone();
    blocking(move || svc.close_session(&id)).await
}

async fn export(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<crate::Export> {
    s.member(&headers, &id)?;
    Ok(Json(s.service.export(&id)?))
}

async fn not_found() -> Response {
    let body = ErrorBody {
        schema_version: SCHEMA_VERSION,
        error: "not_found",
        message: "no such route".into(),
    };
    (StatusCode::NOT_FOUND, Json(body)).into_response()
}

pub fn router(service: Arc<ReviewService>, auth: Auth) -> Router {
    let state = AppState {
        service,
        auth: Arc::new(auth),
    };
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", get(list_sessions).post(create_session))
        .route("/v1/sessions/{id}", get(session_status))
        .route("/v1/sessions/{id}/next", get(next_task))
        .route("/v1/sessions/{id}/annotations", post(submit_annotation))
        .route(
            "/v1/sessions/{id}/reconciliation",
            post(open_reconciliation).get(list_reconciliation),
        )
        .route("/v1/sessions/{id}/resolutions", post(submit_resolution))
        .route("/v1/sessions/{id}/close", post(close_session))
        .route("/v1/sessions/{id}/export", get(export))
        .fallback(not_found)
        .with_state(state)
}

/// Serve until `shutdown` resolves.
pub async fn serve<F>(listener: tokio::net::TcpListener, app: Router, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
