//! Review HTTP service. Reads are concurrent; decisions are applied one at a
//! time under the corpus lock and persisted before the response is sent.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tableforge_core::forge::compute_stats;
use tableforge_core::table::TableSpec;
use tableforge_core::verify::{Corpus, Flag, ReviewDecision, VerifyError};
use tower_http::services::ServeDir;

use crate::commands::{self, file_stem, jsonl, AUDIT_LOG, FLAGS, TRAJECTORIES};
use crate::config::RunConfig;
use crate::CliError;

pub struct AppState {
    corpus: Mutex<Corpus>,
    specs: Vec<TableSpec>,
    out: PathBuf,
}

impl AppState {
    /// Loads the corpus, its tables and the flags written by `verify`.
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let mut corpus = commands::load_corpus(cfg)?;
        let path = cfg.paths.out.join(FLAGS);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::input(format!("{}: {e} (run `tableforge verify` first)", path.display())))?;
        let flags = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<Flag>(l).map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        corpus.set_flags(flags);
        let specs = commands::load_specs(cfg)?;
        Ok(AppState { corpus: Mutex::new(corpus), specs, out: cfg.paths.out.clone() })
    }

    pub fn corpus(&self) -> std::sync::MutexGuard<'_, Corpus> {
        self.corpus.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/flags", get(flags))
        .route("/api/instances/{id}", get(instance))
        .route("/api/images/{file}", get(image))
        .route("/api/decisions", post(decision))
        .route("/api/stats", get(stats))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn flags(State(st): State<Arc<AppState>>) -> Json<Vec<Flag>> {
    let corpus = st.corpus();
    Json(corpus.flags().values().flatten().cloned().collect())
}

async fn instance(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let corpus = st.corpus();
    let Some(inst) = corpus.instance(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown instance {id}"));
    };
    let Some((_, map)) = corpus.table(&inst.table_id) else {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("no table {}", inst.table_id));
    };
    let flags = corpus.flags().get(&id).cloned().unwrap_or_default();
    Json(json!({
        "instance": inst,
        "region_map": map,
        "image_url": format!("/api/images/{}.png", file_stem(&inst.table_id)),
        "flags": flags,
    }))
    .into_response()
}

async fn image(State(st): State<Arc<AppState>>, Path(file): Path<String>) -> Response {
    let stem = file.strip_suffix(".png").unwrap_or(&file);
    if stem.is_empty() || file_stem(stem) != stem {
        return error(StatusCode::NOT_FOUND, "no such image");
    }
    match tokio::fs::read(st.out.join("images").join(format!("{stem}.png"))).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, format!("no image {stem}.png")),
    }
}

async fn decision(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let mut value: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}")),
    };
    if let Some(obj) = value.as_object_mut() {
        obj.entry("timestamp").or_insert_with(|| json!(chrono::Utc::now().to_rfc3339()));
    }
    let d: ReviewDecision = match serde_json::from_value(value) {
        Ok(d) => d,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid decision: {e}")),
    };
    let mut corpus = st.corpus();
    let remaining = match corpus.apply_decision(d.clone()) {
        Ok(f) => f,
        Err(VerifyError::UnknownInstance(id)) => return error(StatusCode::NOT_FOUND, format!("unknown instance {id}")),
        Err(e @ VerifyError::PatchInvalid(_)) => return error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    if let Err(e) = persist(&st, &corpus, &d) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("persisting decision: {e}"));
    }
    Json(json!({ "decision": d, "flags": remaining })).into_response()
}

/// Appends to the audit log and regenerates the corpus and flag files.
fn persist(st: &AppState, corpus: &Corpus, d: &ReviewDecision) -> std::io::Result<()> {
    let mut log = OpenOptions::new().create(true).append(true).open(st.out.join(AUDIT_LOG))?;
    writeln!(log, "{}", serde_json::to_string(d).expect("serializable"))?;
    let flags: Vec<Flag> = corpus.flags().values().flatten().cloned().collect();
    replace(&st.out.join(TRAJECTORIES), corpus.to_jsonl().as_bytes())?;
    replace(&st.out.join(FLAGS), jsonl(&flags).as_bytes())
}

/// Write-then-rename so readers never see a half-written file.
fn replace(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

async fn stats(State(st): State<Arc<AppState>>) -> Response {
    let corpus = st.corpus();
    match compute_stats(corpus.instances(), &st.specs) {
        Ok(report) => Json(report).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, e.to_string()),
    }
}

/// Serves until interrupted.
pub fn run_blocking(cfg: &RunConfig) -> Result<(), CliError> {
    let state = Arc::new(AppState::load(cfg)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(cfg.jobs)
        .enable_all()
        .build()
        .map_err(|e| CliError::service(format!("runtime: {e}")))?;
    runtime.block_on(async {
        let addr = format!("{}:{}", cfg.serve.host, cfg.serve.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::service(format!("cannot bind {addr}: {e}")))?;
        eprintln!("review service listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or(addr));
        axum::serve(listener, router(state, cfg.serve.ui_dir.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::service(e.to_string()))
    })
}
