//! JSON-over-HTTP service: sessions, knowledge-base ingestion and
//! experiment runs. Every response body carries `schema_version`.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use formulink_core::agent::{advance, AgentError, SessionState, Stage};
use formulink_core::formulation::{diff, ground_truth, parse_formulation};
use formulink_core::kb::{build_index, load_corpus, KbError, MIN_CHUNK_SIZE};
use formulink_harness::SCHEMA_VERSION;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::config::ServiceConfig;
use crate::runs::{compare_to_dir, sweep_to_dir, CompareRequest, SweepRequest};
use crate::store::{next_id, RunKind, RunRecord, RunStatus, Store};
use crate::world::{World, WorldError};

/// Error response: a status plus `{schema_version, error, message, ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
    pub extra: Map<String, Value>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
            extra: Map::new(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} `{id}`"))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extra.insert(key.into(), value.into());
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = self.extra;
        body.insert("schema_version".into(), SCHEMA_VERSION.into());
        body.insert("error".into(), self.kind.into());
        body.insert("message".into(), self.message.into());
        (self.status, Json(Value::Object(body))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::internal(format!("persistence failed: {e}"))
    }
}

fn agent_error(e: AgentError, state: &SessionState) -> ApiError {
    match e {
        AgentError::ContextOversize { round, count, budget } => ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "context_oversize",
            format!(
                "round {round}: prompt of {count} tokens exceeds the {budget}-token budget by {}",
                count - budget
            ),
        )
        .with("round", round)
        .with("count", count)
        .with("budget", budget)
        .with("over_by", count - budget)
        .with("stage", stage_value(state.stage)),
        AgentError::Ingest(msg) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ingest_error", msg)
                .with("chunk_size", state.index_ref.chunk_size)
                .with("stage", stage_value(state.stage))
        }
        e @ (AgentError::SessionClosed(_) | AgentError::MaxRoundsExceeded) => {
            ApiError::new(StatusCode::CONFLICT, "session_closed", e.to_string())
                .with("stage", stage_value(state.stage))
        }
        AgentError::InvalidK => ApiError::bad_request(e.to_string()),
        AgentError::Gateway(g) => ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "backend_error",
            g.to_string(),
        ),
        other => ApiError::internal(other.to_string()),
    }
}

fn stage_value(stage: Stage) -> Value {
    serde_json::to_value(stage).expect("stage serialises")
}

fn versioned(mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert("schema_version".into(), SCHEMA_VERSION.into());
    }
    v
}

/// Shared service state.
pub struct App {
    pub config: ServiceConfig,
    pub world: Arc<World>,
    pub store: Store,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<SessionState>>>>,
    runs: Arc<Mutex<BTreeMap<String, RunRecord>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("data directory: {0}")]
    Io(#[from] std::io::Error),
}

impl App {
    /// Loads the corpus and all persisted sessions and runs. Runs that were
    /// still queued or running when the service stopped are marked failed.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, StartupError> {
        let world = Arc::new(World::from_config(&config)?);
        let store = Store::open(&config.data_dir)?;
        let sessions = store
            .load_sessions()?
            .into_iter()
            .map(|s| (s.session_id.clone(), Arc::new(tokio::sync::Mutex::new(s))))
            .collect();
        let mut runs = BTreeMap::new();
        for mut r in store.load_runs()? {
            if !r.status.is_finished() {
                r.status = RunStatus::Failed;
                r.error = Some("interrupted by a service restart".into());
                store.save_run(&r)?;
            }
            runs.insert(r.run_id.clone(), r);
        }
        Ok(Arc::new(Self {
            config,
            world,
            store,
            sessions: Mutex::new(sessions),
            runs: Arc::new(Mutex::new(runs)),
        }))
    }

    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<SessionState>>, ApiError> {
        self.sessions
            .lock()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    fn run(&self, id: &str) -> Result<RunRecord, ApiError> {
        self.runs
            .lock()
            .expect("run map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("run", id))
    }
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/formulation", get(get_formulation))
        .route("/kb/ingest", post(kb_ingest))
        .route("/runs/sweep", post(post_sweep))
        .route("/runs/compare", post(post_compare))
        .route("/runs/{id}", get(get_run))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(app)
}

async fn health(State(app): State<Arc<App>>) -> Json<Value> {
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "corpus": app.world.label,
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    k: Option<usize>,
    chunk_size: Option<usize>,
    profile: Option<String>,
}

async fn create_session(
    State(app): State<Arc<App>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let Json(req) = body?;
    let k = req.k.unwrap_or(app.config.k);
    let chunk_size = req.chunk_size.unwrap_or(app.config.chunk_size);
    if k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    if chunk_size < MIN_CHUNK_SIZE {
        return Err(ApiError::bad_request(format!(
            "chunk_size must be at least {MIN_CHUNK_SIZE}"
        )));
    }
    let profile = match &req.profile {
        Some(p) if p.is_empty() => return Err(ApiError::bad_request("profile must not be empty")),
        Some(p) => ServiceConfig::profile_for(p),
        None => app.config.default_profile(),
    };
    if !app.config.serves_profile(&profile) {
        return Err(ApiError::bad_request(format!(
            "profile `{}` needs the {} backend, which this service does not serve",
            profile.name, profile.backend
        )));
    }
    let app2 = app.clone();
    let state = tokio::task::spawn_blocking(move || {
        // The id is allocated and the record written under the map lock so
        // concurrent creations cannot collide.
        let mut map = app2.sessions.lock().expect("session map lock");
        let id = next_id("s", map.keys().map(String::as_str));
        let state = app2
            .world
            .new_session(id.clone(), profile, k, chunk_size)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        app2.store.save_session(&state)?;
        map.insert(id, Arc::new(tokio::sync::Mutex::new(state.clone())));
        Ok::<_, ApiError>(state)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "schema_version": SCHEMA_VERSION,
            "session_id": state.session_id,
            "stage": state.stage,
            "round": state.round,
            "k": state.k,
            "chunk_size": state.index_ref.chunk_size,
            "profile": state.profile.name,
            "ingest_error": state.index_ref.ingest_error,
        })),
    ))
}

async fn get_session(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let s = app.session(&id)?;
    let state = s.lock().await;
    let v = serde_json::to_value(&*state).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(versioned(v)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PostMessage {
    text: String,
}

async fn post_message(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    body: Result<Json<PostMessage>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let s = app.session(&id)?;
    let Json(req) = body?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("text must not be empty"));
    }
    let mut guard = s.lock().await;
    if guard.stage.is_terminal() {
        return Err(agent_error(AgentError::SessionClosed(guard.stage), &guard));
    }
    let mut work = guard.clone();
    let world = app.world.clone();
    let (work, result) = tokio::task::spawn_blocking(move || {
        let built = world.index(work.index_ref.chunk_size);
        let index = built.as_ref().as_ref().ok();
        let r = advance(&world.gateway, index, &mut work, &req.text);
        (work, r)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;
    if work != *guard {
        app.store.save_session(&work)?;
        *guard = work;
    }
    match result {
        Ok(trace) => Ok(Json(json!({
            "schema_version": SCHEMA_VERSION,
            "reply": trace.reply,
            "stage": guard.stage,
            "round": guard.round,
            "trace": trace,
        }))),
        Err(e) => Err(agent_error(e, &guard)),
    }
}

async fn get_formulation(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let s = app.session(&id)?;
    let state = s.lock().await;
    let text = state.formulation_text().ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "no_formulation",
            format!("session is at stage {:?} and has no formulation", state.stage),
        )
        .with("stage", stage_value(state.stage))
    })?;
    let f = parse_formulation(&text).map_err(|e| ApiError::internal(e.to_string()))?;
    let d = diff(&f, &ground_truth());
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "session_id": state.session_id,
        "text": text,
        "formulation": f,
        "diff": d,
        "matches_ground_truth": d.is_empty(),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestRequest {
    dir: PathBuf,
    chunk_size: usize,
}

/// Builds an index for a corpus directory and reports its size.
pub fn ingest_report(dir: &std::path::Path, chunk_size: usize) -> Result<Value, KbError> {
    let docs = load_corpus(dir)?;
    let index = build_index(&docs, chunk_size)?;
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "dir": dir,
        "chunk_size": chunk_size,
        "documents": docs.len(),
        "total_tokens": docs.iter().map(|d| d.token_count).sum::<usize>(),
        "chunks": index.len(),
    }))
}

async fn kb_ingest(body: Result<Json<IngestRequest>, JsonRejection>) -> Result<Json<Value>, ApiError> {
    let Json(req) = body?;
    let dir = req.dir.clone();
    let result = tokio::task::spawn_blocking(move || ingest_report(&req.dir, req.chunk_size))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    match result {
        Ok(v) => Ok(Json(v)),
        Err(e @ KbError::EmbedderOversize { tokens, limit, .. }) => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "ingest_error",
            e.to_string(),
        )
        .with("tokens", tokens)
        .with("limit", limit)),
        Err(e @ (KbError::ChunkSizeTooSmall { .. } | KbError::Io(_) | KbError::Json(_)
        | KbError::Manifest(_) | KbError::DuplicateDocument(_))) => {
            Err(ApiError::bad_request(e.to_string()).with("dir", dir.display().to_string()))
        }
        Err(e) => Err(ApiError::internal(e.to_string())),
    }
}

fn spawn_run(
    app: &Arc<App>,
    kind: RunKind,
    request: Value,
    job: impl FnOnce(&std::path::Path) -> Result<Value, String> + Send + 'static,
) -> Result<RunRecord, ApiError> {
    let record = {
        let mut runs = app.runs.lock().expect("run map lock");
        let id = next_id("run", runs.keys().map(String::as_str));
        let r = RunRecord::queued(id.clone(), kind, request);
        app.store.save_run(&r)?;
        runs.insert(id, r.clone());
        r
    };
    let runs = app.runs.clone();
    let store = app.store.clone();
    let id = record.run_id.clone();
    tokio::task::spawn_blocking(move || {
        let update = |f: &dyn Fn(&mut RunRecord)| {
            let mut map = runs.lock().expect("run map lock");
            let r = map.get_mut(&id).expect("run exists");
            f(r);
            if let Err(e) = store.save_run(r) {
                log::error!("cannot persist run {id}: {e}");
            }
        };
        update(&|r| r.status = RunStatus::Running);
        let outcome = job(&store.run_dir(&id));
        update(&|r| match &outcome {
            Ok(v) => {
                r.status = RunStatus::Done;
                r.result = Some(v.clone());
            }
            Err(e) => {
                r.status = RunStatus::Failed;
                r.error = Some(e.clone());
            }
        });
    });
    Ok(record)
}

fn accepted(r: &RunRecord) -> (StatusCode, Json<Value>) {
    (
        StatusCode::ACCEPTED,
        Json(json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": r.run_id,
            "kind": r.kind,
            "status": r.status,
        })),
    )
}

async fn post_sweep(
    State(app): State<Arc<App>>,
    body: Result<Json<SweepRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let Json(req) = body?;
    let seed = req.seed.unwrap_or(app.config.corpus_seed);
    let request = serde_json::to_value(&req).expect("request serialises");
    let r = spawn_run(&app, RunKind::Sweep, request, move |dir| {
        let table = sweep_to_dir(seed, dir).map_err(|e| e.to_string())?;
        serde_json::to_value(table).map_err(|e| e.to_string())
    })?;
    Ok(accepted(&r))
}

async fn post_compare(
    State(app): State<Arc<App>>,
    body: Result<Json<CompareRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let Json(req) = body?;
    req.validate().map_err(ApiError::bad_request)?;
    let iai_text = match &req.session_id {
        Some(id) => {
            let s = app.session(id)?;
            let state = s.lock().await;
            Some(state.formulation_text().ok_or_else(|| {
                ApiError::new(
                    StatusCode::CONFLICT,
                    "no_formulation",
                    format!("session `{id}` has not finished"),
                )
            })?)
        }
        None => None,
    };
    let seed = app.config.corpus_seed;
    let request = serde_json::to_value(&req).expect("request serialises");
    let r = spawn_run(&app, RunKind::Compare, request, move |dir| {
        let report = compare_to_dir(&req, seed, iai_text, dir).map_err(|e| e.to_string())?;
        serde_json::to_value(report).map_err(|e| e.to_string())
    })?;
    Ok(accepted(&r))
}

async fn get_run(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
) -> Result<Json<RunRecord>, ApiError> {
    Ok(Json(app.run(&id)?))
}

/// Serves `app` on its configured address until the process stops.
pub async fn serve(app: Arc<App>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(app.config.listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}
