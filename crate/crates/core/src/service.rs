//! HTTP/JSON service over the shared handlers in [`crate::api`].
//!
//! The model and job registries live in memory and are lost on restart.
//! With a persist directory, registered models are also written there as
//! JSON and reloaded at startup.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::{RwLock, Semaphore};

use crate::allocation::AllocateRequest;
use crate::api::{self, BoundsRequest, EstimateRequest, McAnalysis, McOptions};
use crate::error::{FafError, Result};
use crate::io::ModelJson;
use crate::model::{PopulationModel, DEFAULT_GRID_POINTS};
use crate::montecarlo::{McConfig, ProbeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Frontier,
    Mc,
    Allocate,
    Bounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result_ref: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Job {
    record: JobRecord,
    outcome: Option<std::result::Result<Value, (u16, String)>>,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub persist: Option<PathBuf>,
    /// Maximum number of Monte Carlo jobs running at once.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            persist: None,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

pub struct AppState {
    models: RwLock<BTreeMap<String, PopulationModel>>,
    jobs: RwLock<BTreeMap<String, Job>>,
    pool: Arc<Semaphore>,
    persist: Option<PathBuf>,
    next_model: AtomicU64,
    next_job: AtomicU64,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl AppState {
    /// Loads any models already present in the persist directory.
    pub fn new(cfg: ServiceConfig) -> Result<Arc<Self>> {
        let mut models = BTreeMap::new();
        if let Some(dir) = &cfg.persist {
            std::fs::create_dir_all(dir)?;
            for entry in std::fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let Some(id) = path.file_stem().and_then(|s| s.to_str()).filter(|s| valid_id(s)) else {
                    continue;
                };
                models.insert(id.to_string(), crate::io::read_model(&path)?);
            }
        }
        Ok(Arc::new(AppState {
            models: RwLock::new(models),
            jobs: RwLock::new(BTreeMap::new()),
            pool: Arc::new(Semaphore::new(cfg.workers.max(1))),
            persist: cfg.persist,
            next_model: AtomicU64::new(1),
            next_job: AtomicU64::new(1),
        }))
    }
}

struct ApiError(FafError);

impl From<FafError> for ApiError {
    fn from(e: FafError) -> Self {
        ApiError(e)
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        ApiError(FafError::Json(e))
    }
}

fn error_body(status: u16, message: String) -> Response {
    let code = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (code, Json(serde_json::json!({ "error": message }))).into_response()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        error_body(self.0.class().http_status(), self.0.to_string())
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T> {
    Ok(serde_json::from_slice(body)?)
}

/// Replaces a top-level `"model_id"` with the registered model.
async fn resolve_model(state: &AppState, body: &[u8]) -> Result<Value> {
    let mut v: Value = serde_json::from_slice(body)?;
    if let Some(obj) = v.as_object_mut() {
        if let Some(id) = obj.remove("model_id") {
            let id = id.as_str().ok_or_else(|| FafError::Invalid("model_id must be a string".into()))?;
            if obj.contains_key("model") {
                return Err(FafError::Invalid("give either model or model_id, not both".into()));
            }
            let models = state.models.read().await;
            let m = models.get(id).ok_or_else(|| FafError::NotFound(format!("model `{id}`")))?;
            obj.insert("model".into(), serde_json::to_value(ModelJson::from(m))?);
        }
    }
    Ok(v)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterModel {
    #[serde(default)]
    id: Option<String>,
    model: PopulationModel,
}

async fn register_model(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: RegisterModel = parse(&body)?;
    let mut models = st.models.write().await;
    let id = match req.id {
        Some(id) => {
            if !valid_id(&id) {
                return Err(FafError::Invalid(format!("model id `{id}` must match [A-Za-z0-9_-]{{1,64}}")).into());
            }
            if models.contains_key(&id) {
                return Err(FafError::Conflict(format!("model id `{id}` already registered")).into());
            }
            id
        }
        None => loop {
            let id = format!("m{}", st.next_model.fetch_add(1, Ordering::Relaxed));
            if !models.contains_key(&id) {
                break id;
            }
        },
    };
    if let Some(dir) = &st.persist {
        let text = serde_json::to_string_pretty(&ModelJson::from(&req.model))?;
        write_atomic(&dir.join(format!("{id}.json")), text.as_bytes())?;
    }
    models.insert(id.clone(), req.model);
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "model_id": id }))).into_response())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

async fn get_model(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ModelJson>> {
    let models = st.models.read().await;
    let m = models.get(&id).ok_or_else(|| FafError::NotFound(format!("model `{id}`")))?;
    Ok(Json(ModelJson::from(m)))
}

#[derive(Deserialize)]
struct FrontierQuery {
    grid: Option<usize>,
}

async fn get_frontier(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<FrontierQuery>,
) -> ApiResult<Json<api::FrontierResponse>> {
    let model = {
        let models = st.models.read().await;
        models.get(&id).cloned().ok_or_else(|| FafError::NotFound(format!("model `{id}`")))?
    };
    Ok(Json(api::frontier(&model, q.grid.unwrap_or(DEFAULT_GRID_POINTS))?))
}

async fn post_estimate(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: EstimateRequest = serde_json::from_value(resolve_model(&st, &body).await?)?;
    Ok(Json(serde_json::to_value(api::estimate(&req, false)?)?))
}

async fn post_bounds(body: Bytes) -> ApiResult<Json<Value>> {
    let req: BoundsRequest = parse(&body)?;
    Ok(Json(serde_json::to_value(api::bounds(&req)?)?))
}

async fn post_allocate(body: Bytes) -> ApiResult<Json<Value>> {
    let req: AllocateRequest = parse(&body)?;
    Ok(Json(serde_json::to_value(api::allocation(&req)?)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct McQuery {
    analysis: Option<String>,
    grid: Option<usize>,
    n_grid: Option<String>,
    keep_cloud: Option<bool>,
}

impl McQuery {
    fn options(&self) -> Result<McOptions> {
        Ok(McOptions {
            analysis: match &self.analysis {
                Some(a) => a.parse()?,
                None => McAnalysis::Excess,
            },
            grid: self.grid,
            n_grid: self.n_grid.as_deref().map(McOptions::parse_n_grid).transpose()?,
            keep_cloud: self.keep_cloud.unwrap_or(false),
        })
    }
}

/// Queues `work` on the bounded pool and returns `202` with the job id.
async fn submit<F>(st: Arc<AppState>, work: F) -> Response
where
    F: FnOnce() -> Result<Value> + Send + 'static,
{
    let job_id = format!("j{}", st.next_job.fetch_add(1, Ordering::Relaxed));
    let record = JobRecord {
        job_id: job_id.clone(),
        kind: JobKind::Mc,
        status: JobStatus::Pending,
        result_ref: None,
        error: None,
    };
    st.jobs.write().await.insert(job_id.clone(), Job { record: record.clone(), outcome: None });
    let id = job_id.clone();
    tokio::spawn(async move {
        let _permit = st.pool.clone().acquire_owned().await.expect("pool is never closed");
        if let Some(j) = st.jobs.write().await.get_mut(&id) {
            j.record.status = JobStatus::Running;
        }
        let outcome = match tokio::task::spawn_blocking(work).await {
            Ok(Ok(v)) => Ok(v),
            Ok(Err(e)) => Err((e.class().http_status(), e.to_string())),
            Err(join) => Err((500, format!("job panicked: {join}"))),
        };
        if let Some(j) = st.jobs.write().await.get_mut(&id) {
            match &outcome {
                Ok(_) => {
                    j.record.status = JobStatus::Done;
                    j.record.result_ref = Some(format!("/jobs/{id}/result"));
                }
                Err((_, msg)) => {
                    j.record.status = JobStatus::Failed;
                    j.record.error = Some(msg.clone());
                }
            }
            j.outcome = Some(outcome);
        }
    });
    (StatusCode::ACCEPTED, Json(record)).into_response()
}

async fn post_mc(State(st): State<Arc<AppState>>, Query(q): Query<McQuery>, body: Bytes) -> ApiResult<Response> {
    let opts = q.options()?;
    let cfg: McConfig = serde_json::from_value(resolve_model(&st, &body).await?)?;
    match opts.analysis {
        McAnalysis::Band | McAnalysis::Rate => {}
        _ => cfg.validate()?,
    }
    Ok(submit(st, move || api::run_mc(&cfg, &opts)).await)
}

async fn post_probe(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let cfg: ProbeConfig = parse(&body)?;
    Ok(submit(st, move || Ok(serde_json::to_value(api::probe(&cfg)?)?)).await)
}

async fn get_job(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<JobRecord>> {
    let jobs = st.jobs.read().await;
    let j = jobs.get(&id).ok_or_else(|| FafError::NotFound(format!("job `{id}`")))?;
    Ok(Json(j.record.clone()))
}

async fn get_job_result(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let jobs = st.jobs.read().await;
    let j = jobs.get(&id).ok_or_else(|| FafError::NotFound(format!("job `{id}`")))?;
    Ok(match &j.outcome {
        None => error_body(409, format!("job `{id}` is {:?}", j.record.status).to_lowercase()),
        Some(Ok(v)) => Json(v.clone()).into_response(),
        Some(Err((status, msg))) => error_body(*status, msg.clone()),
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/models", post(register_model))
        .route("/models/{id}", get(get_model))
        .route("/models/{id}/frontier", get(get_frontier))
        .route("/estimate", post(post_estimate))
        .route("/bounds/sweep", post(post_bounds))
        .route("/allocate", post(post_allocate))
        .route("/mc", post(post_mc))
        .route("/probe", post(post_probe))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/result", get(get_job_result))
        .with_state(state)
}

/// Serves until the process is stopped.
pub fn serve_blocking(addr: SocketAddr, cfg: ServiceConfig) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let app = router(AppState::new(cfg)?);
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("faf: listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}
