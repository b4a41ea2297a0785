//! HTTP service: region catalog, synchronous scoring and asynchronous
//! optimization jobs polled by id.
//!
//! * `GET /regions`
//! * `POST /score` with `{"region", "allocation": [site ids], "config": {...}}`
//! * `POST /jobs` with `{"region", "config": {...}}`
//! * `GET /jobs/{id}`
//!
//! `config` takes the same kebab-case keys as the config file.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::config::{ConfigError, RunConfig, Settings};
use crate::run::{self, Dataset, OptimizeReport, RunError, ScoreReport};
use crate::solver::{Control, Progress};

pub const DEFAULT_QUEUE: usize = 8;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub data_dir: PathBuf,
    pub host: String,
    pub port: u16,
    pub workers: usize,
    pub queue: usize,
    pub cors: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RegionMeta {
    name: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RegionEntry {
    pub id: String,
    pub name: String,
    pub data: Arc<Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionInfo {
    pub id: String,
    pub name: String,
    /// Areas.
    pub m: usize,
    /// Candidate sites before ownership filtering.
    pub n: usize,
    pub site_types: Vec<u32>,
}

/// Regions keyed by id; read-only once loaded.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    entries: Vec<RegionEntry>,
}

impl Catalog {
    pub fn new(mut entries: Vec<RegionEntry>) -> Self {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Self { entries }
    }

    /// Every subdirectory of `dir` holding `areas.csv` and `sites.csv`.
    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let listing =
            std::fs::read_dir(dir).map_err(|e| ConfigError(format!("{}: {e}", dir.display())))?;
        let mut entries = Vec::new();
        for item in listing {
            let path = item.map_err(|e| ConfigError(e.to_string()))?.path();
            if !path.join("areas.csv").is_file() || !path.join("sites.csv").is_file() {
                continue;
            }
            let id = path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let strata = path.join("strata.csv");
            let data = Dataset::load(
                &path.join("areas.csv"),
                strata.is_file().then_some(strata.as_path()),
                &path.join("sites.csv"),
            )?;
            let meta = match std::fs::read_to_string(path.join("meta.toml")) {
                Ok(text) => toml::from_str::<RegionMeta>(&text).map_err(|e| {
                    ConfigError(format!("{}: {e}", path.join("meta.toml").display()))
                })?,
                Err(_) => RegionMeta::default(),
            };
            log::info!(
                "loaded region {id}: {} areas, {} sites",
                data.region.len(),
                data.sites.len()
            );
            entries.push(RegionEntry {
                name: meta.name.unwrap_or_else(|| id.clone()),
                id,
                data: Arc::new(data),
            });
        }
        Ok(Self::new(entries))
    }

    pub fn get(&self, id: &str) -> Option<&RegionEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn info(&self) -> Vec<RegionInfo> {
        self.entries
            .iter()
            .map(|e| RegionInfo {
                id: e.id.clone(),
                name: e.name.clone(),
                m: e.data.region.len(),
                n: e.data.sites.len(),
                site_types: e.data.site_types(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobProgress {
    pub generation: usize,
    #[serde(with = "crate::serde_float")]
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub region: String,
    pub state: JobState,
    pub config: Settings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<JobProgress>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<OptimizeReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct AppState {
    catalog: Catalog,
    jobs: Mutex<HashMap<String, Arc<Mutex<Job>>>>,
    workers: Arc<Semaphore>,
    queued: AtomicUsize,
    queue_limit: usize,
}

#[derive(Debug, Clone)]
pub struct AppOptions {
    pub workers: usize,
    pub queue: usize,
    pub cors: bool,
}

impl Default for AppOptions {
    fn default() -> Self {
        Self {
            workers: 2,
            queue: DEFAULT_QUEUE,
            cors: false,
        }
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<RunError> for ApiError {
    fn from(e: RunError) -> Self {
        let status = match e {
            RunError::Solve(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self(StatusCode::UNPROCESSABLE_ENTITY, e.body_text())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub region: String,
    pub allocation: Vec<String>,
    #[serde(default)]
    pub config: RunConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub region: String,
    #[serde(default)]
    pub config: RunConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobCreated {
    pub id: String,
    pub state: JobState,
}

fn lookup<'a>(state: &'a AppState, region: &str) -> Result<&'a RegionEntry, ApiError> {
    state
        .catalog
        .get(region)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown region {region:?}")))
}

/// Data always comes from the catalog; file and output keys are refused.
/// The only grid accepted is the built-in one.
fn request_settings(cfg: &RunConfig) -> Result<Settings, ApiError> {
    let grid_path = cfg
        .grid_file
        .as_deref()
        .is_some_and(|g| !g.trim().eq_ignore_ascii_case("default"));
    if cfg.areas.is_some()
        || cfg.strata.is_some()
        || cfg.sites.is_some()
        || cfg.synth_m.is_some()
        || cfg.out.is_some()
        || grid_path
    {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            "input, output and grid file paths are not accepted over HTTP".into(),
        ));
    }
    cfg.resolve().map_err(|e| RunError::from(e).into())
}

async fn list_regions(State(state): State<Arc<AppState>>) -> Json<Vec<RegionInfo>> {
    Json(state.catalog.info())
}

async fn score(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ScoreRequest>, JsonRejection>,
) -> Result<Json<ScoreReport>, ApiError> {
    let Json(req) = body?;
    let data = lookup(&state, &req.region)?.data.clone();
    let settings = request_settings(&req.config)?;
    let report = tokio::task::spawn_blocking(move || run::score(&data, &settings, &req.allocation))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(report))
}

async fn submit_job(
    State(state): State<Arc<AppState>>,
    body: Result<Json<JobRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<JobCreated>), ApiError> {
    let Json(req) = body?;
    let data = lookup(&state, &req.region)?.data.clone();
    let settings = request_settings(&req.config)?;
    if settings.k.is_none() {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            "config.k is required".into(),
        ));
    }
    let reserved = state
        .queued
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |q| {
            (q < state.queue_limit).then_some(q + 1)
        });
    if reserved.is_err() {
        return Err(ApiError(StatusCode::CONFLICT, "job queue is full".into()));
    }

    let id = uuid::Uuid::new_v4().simple().to_string();
    let job = Arc::new(Mutex::new(Job {
        id: id.clone(),
        region: req.region,
        state: JobState::Queued,
        config: settings.clone(),
        progress: None,
        result: None,
        error: None,
    }));
    state
        .jobs
        .lock()
        .expect("job table poisoned")
        .insert(id.clone(), job.clone());

    let state2 = state.clone();
    tokio::spawn(async move {
        let permit = state2.workers.clone().acquire_owned().await;
        state2.queued.fetch_sub(1, Ordering::SeqCst);
        job.lock().expect("job poisoned").state = JobState::Running;
        let tracked = job.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            let observe = move |p: Progress| {
                tracked.lock().expect("job poisoned").progress = Some(JobProgress {
                    generation: p.generation,
                    best: p.best,
                });
            };
            let control = Control {
                cancel: None,
                progress: Some(&observe),
            };
            run::optimize(&data, &settings, control)
        })
        .await;
        drop(permit);
        let mut j = job.lock().expect("job poisoned");
        match outcome {
            Ok(Ok(report)) => {
                j.state = JobState::Done;
                j.result = Some(report);
            }
            Ok(Err(e)) => {
                j.state = JobState::Failed;
                j.error = Some(e.to_string());
            }
            Err(e) => {
                j.state = JobState::Failed;
                j.error = Some(format!("job panicked: {e}"));
            }
        }
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(JobCreated {
            id,
            state: JobState::Queued,
        }),
    ))
}

async fn poll_job(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Job>, ApiError> {
    let job = state
        .jobs
        .lock()
        .expect("job table poisoned")
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown job {id:?}")))?;
    let snapshot = job.lock().expect("job poisoned").clone();
    Ok(Json(snapshot))
}

async fn preflight() -> StatusCode {
    StatusCode::NO_CONTENT
}

async fn add_cors(mut res: Response) -> Response {
    let h = res.headers_mut();
    h.insert(
        header::ACCESS_CONTROL_ALLOW_ORIGIN,
        HeaderValue::from_static("*"),
    );
    h.insert(
        header::ACCESS_CONTROL_ALLOW_METHODS,
        HeaderValue::from_static("GET, POST, OPTIONS"),
    );
    h.insert(
        header::ACCESS_CONTROL_ALLOW_HEADERS,
        HeaderValue::from_static("content-type"),
    );
    res
}

pub fn router(catalog: Catalog, opts: &AppOptions) -> Router {
    let state = Arc::new(AppState {
        catalog,
        jobs: Mutex::new(HashMap::new()),
        workers: Arc::new(Semaphore::new(opts.workers.max(1))),
        queued: AtomicUsize::new(0),
        queue_limit: opts.queue,
    });
    let app = Router::new()
        .route("/regions", get(list_regions))
        .route("/score", post(score).options(preflight))
        .route("/jobs", post(submit_job).options(preflight))
        .route("/jobs/{id}", get(poll_job))
        .with_state(state);
    if opts.cors {
        app.layer(axum::middleware::map_response(add_cors))
    } else {
        app
    }
}

pub async fn serve(opts: ServeOptions) -> std::io::Result<()> {
    let catalog =
        Catalog::load(&opts.data_dir).map_err(|e| std::io::Error::other(e.to_string()))?;
    let app = router(
        catalog,
        &AppOptions {
            workers: opts.workers,
            queue: opts.queue,
            cors: opts.cors,
        },
    );
    let addr: SocketAddr = format!("{}:{}", opts.host, opts.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("{e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub fn serve_blocking(opts: ServeOptions) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(opts))
}
