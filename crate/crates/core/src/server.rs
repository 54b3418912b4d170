//! HTTP run management: submit runs, poll them, fetch perspectives and
//! metrics, and re-factorize stored runs with a new rank.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::meta::ModelBundle;
use crate::metrics::DEFAULT_N_VALUES;
use crate::pipeline::{run_with_id, FieldError, Home, RunConfig, RunResult, RunStatus, RunStore};

enum Entry {
    Pending { status: RunStatus, config: Box<RunConfig> },
    Done(Box<RunResult>),
}

pub struct AppState {
    home: Home,
    store: RunStore,
    runs: RwLock<HashMap<String, Entry>>,
    executions: AtomicU64,
    next_id: AtomicU64,
}

impl AppState {
    /// Opens the run store under `home` and loads the runs already in it.
    pub fn open(home: Home) -> crate::Result<Arc<Self>> {
        let store = RunStore::open(home.runs_dir())?;
        let runs = store
            .list()?
            .into_iter()
            .map(|r| (r.run_id.clone(), Entry::Done(Box::new(r))))
            .collect::<HashMap<_, _>>();
        let next_id = AtomicU64::new(runs.len() as u64);
        Ok(Arc::new(Self {
            home,
            store,
            runs: RwLock::new(runs),
            executions: AtomicU64::new(0),
            next_id,
        }))
    }

    /// Detector executions performed by this service since start.
    pub fn detector_executions(&self) -> u64 {
        self.executions.load(Ordering::Relaxed)
    }

    fn fresh_id(&self) -> String {
        let runs = self.runs.read().expect("registry lock");
        loop {
            let id = format!("run-{:04}", self.next_id.fetch_add(1, Ordering::Relaxed));
            if !runs.contains_key(&id) {
                return id;
            }
        }
    }

    fn done(&self, id: &str) -> Result<RunResult, ApiError> {
        match self.runs.read().expect("registry lock").get(id) {
            Some(Entry::Done(r)) => Ok((**r).clone()),
            Some(Entry::Pending { status, .. }) => Err(ApiError::new(
                StatusCode::CONFLICT,
                "not_ready",
                format!("run {id} is {}", status_name(*status)),
            )),
            None => Err(Error::NotFound(format!("run {id:?}")).into()),
        }
    }
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Queued => "queued",
        RunStatus::Running => "running",
        RunStatus::Completed => "completed",
        RunStatus::Infeasible => "infeasible",
        RunStatus::Failed => "failed",
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    fields: Vec<FieldError>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: String) -> Self {
        Self {
            status,
            kind,
            message,
            fields: Vec::new(),
        }
    }

    fn validation(fields: Vec<FieldError>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            kind: "validation",
            message: format!("{} invalid field(s)", fields.len()),
            fields,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Parameter(_) | Error::Rank { .. } | Error::Shape(_) | Error::Dimension { .. } | Error::Label { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.kind(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.kind, "message": self.message });
        if !self.fields.is_empty() {
            body["fields"] = json!(self.fields);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/runs", get(list_runs).post(submit_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/perspectives", get(get_perspectives).patch(patch_perspectives))
        .route("/runs/{id}/metrics", get(get_metrics))
        .route("/datasets", get(list_datasets))
        .route("/models", get(get_models))
        .route("/stats", get(get_stats))
        .with_state(state)
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(addr: SocketAddr, home: Home) -> crate::Result<()> {
    let state = AppState::open(home)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    eprintln!("listening on {}", listener.local_addr().map_or(addr, |a| a));
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}

async fn submit_run(State(state): State<Arc<AppState>>, Json(body): Json<Value>) -> ApiResult<(StatusCode, Json<Value>)> {
    let config: RunConfig = serde_json::from_value(body).map_err(|e| {
        ApiError::validation(vec![FieldError {
            field: "body".into(),
            message: e.to_string(),
        }])
    })?;
    config.validate().map_err(ApiError::validation)?;
    if let Err(e) = state.home.resolve_dataset(&config.dataset) {
        return Err(ApiError::validation(vec![FieldError {
            field: "dataset".into(),
            message: e.to_string(),
        }]));
    }

    let id = state.fresh_id();
    state.runs.write().expect("registry lock").insert(
        id.clone(),
        Entry::Pending {
            status: RunStatus::Queued,
            config: Box::new(config.clone()),
        },
    );
    let worker = state.clone();
    let run_id = id.clone();
    tokio::task::spawn_blocking(move || {
        if let Some(Entry::Pending { status, .. }) = worker.runs.write().expect("registry lock").get_mut(&run_id) {
            *status = RunStatus::Running;
        }
        let result = run_with_id(&config, &worker.home, run_id.clone());
        let executed = (result.detector_results.len() + result.failures.len()) as u64;
        worker.executions.fetch_add(executed, Ordering::Relaxed);
        eprintln!(
            "run {run_id}: {} with {executed} detector executions",
            status_name(result.status)
        );
        if let Err(e) = worker.store.save(&result) {
            eprintln!("run {run_id}: not persisted: {e}");
        }
        worker
            .runs
            .write()
            .expect("registry lock")
            .insert(run_id, Entry::Done(Box::new(result)));
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": id }))))
}

#[derive(Serialize)]
struct PendingSummary<'a> {
    run_id: &'a str,
    status: RunStatus,
    dataset: &'a str,
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Json<Value> {
    let runs = state.runs.read().expect("registry lock");
    let mut ids: Vec<&String> = runs.keys().collect();
    ids.sort();
    let out: Vec<Value> = ids
        .into_iter()
        .map(|id| match &runs[id] {
            Entry::Done(r) => json!(r.summary()),
            Entry::Pending { status, config } => json!(PendingSummary {
                run_id: id,
                status: *status,
                dataset: &config.dataset,
            }),
        })
        .collect();
    Json(json!(out))
}

async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    match state.runs.read().expect("registry lock").get(&id) {
        Some(Entry::Done(r)) => Ok(Json(&**r).into_response()),
        Some(Entry::Pending { status, .. }) => Ok(Json(json!({ "run_id": id, "status": status })).into_response()),
        None => Err(Error::NotFound(format!("run {id:?}")).into()),
    }
}

fn perspectives_body(run: &RunResult) -> ApiResult<Json<Value>> {
    let set = run.perspective_set.as_ref().ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "no_perspectives",
            format!("run {} has no perspectives ({})", run.run_id, status_name(run.status)),
        )
    })?;
    Ok(Json(json!({
        "run_id": run.run_id,
        "perspective_set": set,
        "perspectives": run.perspectives(),
    })))
}

async fn get_perspectives(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    perspectives_body(&state.done(&id)?)
}

#[derive(Deserialize)]
struct RankChange {
    g: usize,
}

async fn patch_perspectives(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(change): Json<RankChange>,
) -> ApiResult<Json<Value>> {
    let mut run = state.done(&id)?;
    if run.detector_results.is_empty() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "no_scores",
            format!("run {id} has no detector scores to factorize"),
        ));
    }
    let run = tokio::task::spawn_blocking(move || -> crate::Result<RunResult> {
        run.refactorize(change.g)?;
        Ok(run)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    state.store.save(&run)?;
    let body = perspectives_body(&run)?;
    state
        .runs
        .write()
        .expect("registry lock")
        .insert(id, Entry::Done(Box::new(run)));
    Ok(body)
}

#[derive(Deserialize)]
struct MetricsQuery {
    n: Option<String>,
}

async fn get_metrics(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<Json<Value>> {
    let n_values: Vec<usize> = match q.n.as_deref() {
        None | Some("") => DEFAULT_N_VALUES.to_vec(),
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
                    ApiError::validation(vec![FieldError {
                        field: "n".into(),
                        message: format!("{s:?} is not a positive integer"),
                    }])
                })
            })
            .collect::<ApiResult<_>>()?,
    };
    let run = state.done(&id)?;
    let rows = run.evaluate(None, &n_values)?;
    Ok(Json(json!({ "run_id": id, "rows": rows })))
}

async fn list_datasets(State(state): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(state.home.list_datasets()?)))
}

async fn get_models(State(state): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let path = state.home.resolve_bundle(None)?;
    let bundle = ModelBundle::load(&path)?;
    let models: Vec<Value> = bundle
        .models
        .iter()
        .map(|m| {
            json!({
                "algorithm": m.algorithm,
                "kind": m.kind,
                "feature_order": m.feature_order,
                "training_r2": m.training_r2,
            })
        })
        .collect();
    Ok(Json(json!({ "path": path.display().to_string(), "models": models })))
}

async fn get_stats(State(state): State<Arc<AppState>>) -> Json<Value> {
    let runs = state.runs.read().expect("registry lock").len();
    Json(json!({ "runs": runs, "detector_executions": state.detector_executions() }))
}
