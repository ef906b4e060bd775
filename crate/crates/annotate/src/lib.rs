//! HTTP interface to the annotation service.
//!
//! | method | path | body / query | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | | `{annotator_token}` |
//! | GET | `/items/next` | `?token=` | `{status, items, done, quota}` |
//! | POST | `/judgments` | `{token, item_id, choice}` | `{stored, done, quota}` |
//! | GET | `/progress` | | survey counters |
//! | GET | `/results` | `?strict=` | verdicts and human reports |
//!
//! When an admin token is configured, `/results` requires it in the
//! `x-admin-token` header.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use qcloze::annotation::{AnnotationService, Judgment, SubmitError};
use serde::Deserialize;
use serde_json::json;

pub const ADMIN_HEADER: &str = "x-admin-token";

#[derive(Clone)]
pub struct AppState {
    service: Arc<Mutex<AnnotationService>>,
    admin_token: Option<String>,
}

impl AppState {
    pub fn new(service: AnnotationService, admin_token: Option<String>) -> Self {
        AppState {
            service: Arc::new(Mutex::new(service)),
            admin_token,
        }
    }

    fn lock(&self) -> MutexGuard<'_, AnnotationService> {
        self.service.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Runs `f` against the service, e.g. for inspection in tests.
    pub fn with<R>(&self, f: impl FnOnce(&AnnotationService) -> R) -> R {
        f(&self.lock())
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn error(status: StatusCode, msg: impl ToString) -> Response {
    (status, Json(json!({ "error": msg.to_string() }))).into_response()
}

fn submit_error(e: SubmitError) -> Response {
    let status = match e {
        SubmitError::UnknownToken => StatusCode::UNAUTHORIZED,
        SubmitError::InvalidChoice(_) => StatusCode::UNPROCESSABLE_ENTITY,
        SubmitError::Unassigned | SubmitError::ScreenedOut => StatusCode::FORBIDDEN,
        SubmitError::Expired => StatusCode::GONE,
        SubmitError::Duplicate => StatusCode::CONFLICT,
        SubmitError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
    };
    error(status, e)
}

async fn create_session(State(st): State<AppState>) -> Response {
    match st.lock().create_session(now_ms()) {
        Ok(token) => (StatusCode::CREATED, Json(json!({ "annotator_token": token }))).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

#[derive(Deserialize)]
struct TokenQuery {
    token: String,
}

async fn next_items(State(st): State<AppState>, Query(q): Query<TokenQuery>) -> Response {
    match st.lock().next_items(&q.token, now_ms()) {
        Ok(next) => Json(next).into_response(),
        Err(e) => submit_error(e),
    }
}

#[derive(Deserialize)]
struct Submission {
    token: String,
    item_id: String,
    choice: String,
}

async fn submit(State(st): State<AppState>, Json(s): Json<Submission>) -> Response {
    let mut svc = st.lock();
    match svc.submit(&s.token, &s.item_id, &s.choice, now_ms()) {
        Ok(Judgment { item_id, choice, .. }) => {
            let quota = svc.survey().config.max_items_per_annotator;
            (
                StatusCode::CREATED,
                Json(json!({ "stored": true, "item_id": item_id, "choice": choice, "quota": quota })),
            )
                .into_response()
        }
        Err(e) => submit_error(e),
    }
}

async fn progress(State(st): State<AppState>) -> Response {
    Json(st.lock().progress()).into_response()
}

#[derive(Deserialize)]
struct ResultsQuery {
    #[serde(default)]
    strict: bool,
}

async fn results(State(st): State<AppState>, headers: HeaderMap, Query(q): Query<ResultsQuery>) -> Response {
    if let Some(want) = &st.admin_token {
        if headers.get(ADMIN_HEADER).and_then(|v| v.to_str().ok()) != Some(want.as_str()) {
            return error(StatusCode::UNAUTHORIZED, "admin token required");
        }
    }
    let (survey, judgments) = st.with(|s| (s.survey().clone(), s.live_judgments()));
    match qcloze::annotation::aggregate(&survey, &judgments, q.strict) {
        Ok(agg) => Json(agg).into_response(),
        Err(e) => error(StatusCode::CONFLICT, e),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/items/next", get(next_items))
        .route("/judgments", post(submit))
        .route("/progress", get(progress))
        .route("/results", get(results))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
