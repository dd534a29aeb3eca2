use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lowmt_core::humeval::{CampaignStore, HumevalError, Progress, StoreError, Submission};
use lowmt_core::metrics::MetricReport;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::{render_report, ReportFormat};

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<CampaignStore>>,
    metrics: Arc<BTreeMap<String, MetricReport>>,
}

impl AppState {
    pub fn new(store: CampaignStore, metrics: BTreeMap<String, MetricReport>) -> Self {
        AppState {
            store: Arc::new(Mutex::new(store)),
            metrics: Arc::new(metrics),
        }
    }

    pub fn store(&self) -> Arc<Mutex<CampaignStore>> {
        self.store.clone()
    }
}

pub struct ApiError(StatusCode, serde_json::Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<HumevalError> for ApiError {
    fn from(e: HumevalError) -> Self {
        let message = e.to_string();
        match e {
            HumevalError::UnknownAnnotator(_) | HumevalError::UnknownSegment(_) => {
                ApiError(StatusCode::NOT_FOUND, json!({"error": "not_found", "message": message}))
            }
            HumevalError::Validation { field, .. } => ApiError(
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"error": "validation", "field": field, "message": message}),
            ),
            HumevalError::Conflict { segment, slot, .. } => ApiError(
                StatusCode::CONFLICT,
                json!({"error": "conflict", "segment": segment, "slot": slot, "message": message}),
            ),
            _ => ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({"error": "internal", "message": message})),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Session(h) => h.into(),
            other => ApiError(
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({"error": "storage", "message": other.to_string()}),
            ),
        }
    }
}

/// Request body: one submission, a list, or `{"submissions": [...]}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum SubmissionBody {
    One(Submission),
    Many(Vec<Submission>),
    Wrapped { submissions: Vec<Submission> },
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn next_task(State(state): State<AppState>, Path(annotator): Path<String>) -> Result<Response, ApiError> {
    let store = state.store.lock().unwrap();
    let task = store.session().next_task(&annotator)?;
    Ok(Json(task).into_response())
}

async fn submit(
    State(state): State<AppState>,
    Path(annotator): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let subs = match serde_json::from_slice::<SubmissionBody>(&body) {
        Ok(SubmissionBody::One(s)) => vec![s],
        Ok(SubmissionBody::Many(v)) | Ok(SubmissionBody::Wrapped { submissions: v }) => v,
        Err(e) => {
            return Err(ApiError(
                StatusCode::BAD_REQUEST,
                json!({"error": "malformed", "message": e.to_string()}),
            ))
        }
    };
    let mut store = state.store.lock().unwrap();
    let records = store.submit(&annotator, &subs)?;
    let progress = store.session().annotator_progress(&annotator);
    Ok(Json(json!({"accepted": records.len(), "progress": progress})).into_response())
}

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn report(State(state): State<AppState>, Query(q): Query<ReportQuery>) -> Result<Response, ApiError> {
    let format = match q.format.as_deref() {
        None | Some("json") => ReportFormat::Json,
        Some("tsv") => ReportFormat::Tsv,
        Some(other) => {
            return Err(ApiError(
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"error": "validation", "field": "format", "message": format!("unknown format {other:?}")}),
            ))
        }
    };
    let store = state.store.lock().unwrap();
    let body = render_report(store.session(), store.records(), &state.metrics, format, false)?;
    let content_type = match format {
        ReportFormat::Json => "application/json",
        ReportFormat::Tsv => "text/tab-separated-values; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

async fn progress(State(state): State<AppState>) -> Json<serde_json::Value> {
    let store = state.store.lock().unwrap();
    let s = store.session();
    let per: BTreeMap<&str, Progress> = s
        .annotators
        .iter()
        .map(|a| (a.as_str(), s.annotator_progress(a)))
        .collect();
    let p = s.progress();
    Json(json!({
        "done": p.done,
        "total": p.total,
        "complete": s.is_complete(),
        "annotators": per,
    }))
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/annotators/:id/next", get(next_task))
        .route("/annotators/:id/submissions", post(submit))
        .route("/report", get(report))
        .route("/progress", get(progress))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until ctrl-c or SIGTERM, then flushes the annotation log.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState, static_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let store = state.store();
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    store.lock().unwrap().flush()?;
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
