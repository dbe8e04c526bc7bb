//! Job service: experiments run on a blocking pool behind an HTTP/JSON API.
//!
//! * `GET  /health`
//! * `GET  /v1/plugins`
//! * `POST /v1/jobs` with a [`JobRequest`] body, answers `202` and a [`JobStatus`]
//! * `GET  /v1/jobs` and `GET /v1/jobs/{id}`

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use hashcond::harness::{run_job, ApiError, JobRequest, JobState, JobStatus};
use hashcond::hashing::PLUGINS;
use hashcond::ErrorKind;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::{RwLock, Semaphore};
use uuid::Uuid;

#[derive(Clone)]
pub struct AppState {
    jobs: Arc<RwLock<BTreeMap<String, JobStatus>>>,
    slots: Arc<Semaphore>,
}

impl AppState {
    /// `workers` jobs run at once; the rest wait queued.
    pub fn new(workers: usize) -> Self {
        AppState {
            jobs: Arc::default(),
            slots: Arc::new(Semaphore::new(workers.max(1))),
        }
    }
}

impl Default for AppState {
    fn default() -> Self {
        AppState::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

struct HttpError(StatusCode, ApiError);

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn not_found(id: &str) -> HttpError {
    HttpError(
        StatusCode::NOT_FOUND,
        ApiError { kind: ErrorKind::Validation, message: format!("no job {id}") },
    )
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/plugins", get(plugins))
        .route("/v1/jobs", get(list_jobs).post(submit))
        .route("/v1/jobs/{id}", get(job))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn plugins() -> Json<Vec<&'static str>> {
    Json(PLUGINS.to_vec())
}

async fn list_jobs(State(st): State<AppState>) -> Json<Vec<JobStatus>> {
    Json(st.jobs.read().await.values().cloned().collect())
}

async fn job(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<JobStatus>, HttpError> {
    st.jobs.read().await.get(&id).cloned().map(Json).ok_or_else(|| not_found(&id))
}

async fn submit(State(st): State<AppState>, Json(req): Json<JobRequest>) -> (StatusCode, Json<JobStatus>) {
    let id = Uuid::new_v4().to_string();
    let status = JobStatus {
        id: id.clone(),
        command: req.command().to_string(),
        state: JobState::Queued,
        result: None,
        error: None,
        seconds: None,
    };
    st.jobs.write().await.insert(id.clone(), status.clone());
    tracing::info!(%id, command = req.command(), "job queued");
    tokio::spawn(execute(st, id, req));
    (StatusCode::ACCEPTED, Json(status))
}

async fn execute(st: AppState, id: String, req: JobRequest) {
    let _permit = st.slots.clone().acquire_owned().await.expect("semaphore never closed");
    set_state(&st, &id, |s| s.state = JobState::Running).await;
    let start = Instant::now();
    let outcome = tokio::task::spawn_blocking(move || run_job(&req)).await;
    let seconds = start.elapsed().as_secs_f64();
    set_state(&st, &id, |s| {
        s.seconds = Some(seconds);
        match outcome {
            Ok(Ok(v)) => {
                s.state = JobState::Succeeded;
                s.result = Some(v);
            }
            Ok(Err(e)) => {
                s.state = JobState::Failed;
                s.error = Some(ApiError::from(&e));
            }
            Err(panic) => {
                s.state = JobState::Failed;
                s.error = Some(ApiError { kind: ErrorKind::Internal, message: format!("job panicked: {panic}") });
            }
        }
    })
    .await;
    tracing::info!(%id, seconds, "job finished");
}

async fn set_state(st: &AppState, id: &str, f: impl FnOnce(&mut JobStatus)) {
    if let Some(s) = st.jobs.write().await.get_mut(id) {
        f(s);
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Binds an ephemeral local port and serves in the background.
pub async fn spawn_local() -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(("127.0.0.1", 0)).await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(serve(listener, AppState::default(), std::future::pending()));
    Ok((addr, handle))
}
