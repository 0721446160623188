//! Local HTTP API over the open pilot round, under `/v1`.
//!
//! | method | path                   | body / query                                   |
//! |--------|------------------------|------------------------------------------------|
//! | GET    | `/v1/round`            |                                                |
//! | GET    | `/v1/items`            | `?status=pending` (default) or `?status=all`   |
//! | GET    | `/v1/items/{id}`       |                                                |
//! | POST   | `/v1/labels`           | `{item_id, task, label, rationale?}`           |
//! | GET    | `/v1/agreement`        |                                                |
//! | GET    | `/v1/disagreements`    |                                                |
//! | POST   | `/v1/rounds/advance`   | `{notes?, reuse_sample?, next_prompt_version_id?}` |
//! | GET    | `/v1/rounds`           |                                                |
//!
//! Errors are `{"error": {"code": ..., "message": ...}}` with a 4xx status.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::oneshot;

use primes_core::pilot::{AgreementView, DisagreementRow, GateConfig, PilotRound, RoundLedger, RoundStore, SubmitOutcome};
use primes_core::prompt::PromptLedger;
use primes_core::{DataItem, Error, LabelSchema};

use crate::commands::{close_round, latest_round_file, NextRound};
use crate::Context;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::RoundClosed(_) => (StatusCode::CONFLICT, "round_closed"),
            Error::MismatchedItems { .. } => (StatusCode::CONFLICT, "round_incomplete"),
            Error::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Output directory plus the round store currently being served.
pub struct AppState {
    out_dir: PathBuf,
    pinned: Option<PathBuf>,
    current: Mutex<Option<(PathBuf, Arc<RoundStore>)>>,
}

impl AppState {
    /// Serves `round` if given, otherwise the newest round under `out_dir`,
    /// switching when a newer round appears.
    pub fn new(out_dir: impl Into<PathBuf>, round: Option<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            pinned: round,
            current: Mutex::new(None),
        }
    }

    fn store(&self) -> Result<Arc<RoundStore>, ApiError> {
        let path = match &self.pinned {
            Some(p) => p.clone(),
            None => latest_round_file(&self.out_dir)
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_round", "no pilot round has been opened"))?,
        };
        let mut current = self.current.lock().unwrap();
        if let Some((p, s)) = current.as_ref() {
            if *p == path {
                return Ok(s.clone());
            }
        }
        let store = Arc::new(RoundStore::open(&path)?);
        *current = Some((path, store.clone()));
        Ok(store)
    }
}

#[derive(Debug, Serialize)]
struct RoundView {
    round_number: u32,
    prompt_version_id: String,
    schema: LabelSchema,
    gate: GateConfig,
    closed: bool,
    labelled: usize,
    total: usize,
}

#[derive(Debug, Serialize)]
struct ItemView {
    item_id: String,
    source: String,
    fields: BTreeMap<String, String>,
    labels: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rationale: Option<String>,
}

#[derive(Debug, Serialize)]
struct ItemList {
    items: Vec<ItemView>,
    labelled: usize,
    total: usize,
}

#[derive(Debug, Deserialize)]
struct ItemQuery {
    #[serde(default)]
    status: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRequest {
    item_id: String,
    task: String,
    label: String,
    #[serde(default)]
    rationale: Option<String>,
}

#[derive(Debug, Serialize)]
struct LabelResponse {
    outcome: SubmitOutcome,
    item_id: String,
    task: String,
    label: String,
    labelled: usize,
    total: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceRequest {
    #[serde(default)]
    notes: Option<String>,
    #[serde(default)]
    reuse_sample: bool,
    #[serde(default)]
    next_prompt_version_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct AdvanceResponse {
    round: PilotRound,
    next: NextRound,
}

fn item_view(store: &RoundStore, item: &DataItem) -> ItemView {
    let st = store.snapshot();
    ItemView {
        item_id: item.id().to_string(),
        source: item.source().to_string(),
        fields: item.fields().clone(),
        labels: st.human_labels.get(item.id()).cloned().unwrap_or_default(),
        rationale: st.human_rationales.get(item.id()).cloned(),
    }
}

fn progress(store: &RoundStore) -> (usize, usize) {
    let total = store.snapshot().items.len();
    (total - store.pending_items().len(), total)
}

async fn get_round(State(s): State<Arc<AppState>>) -> ApiResult<RoundView> {
    let store = s.store()?;
    let (labelled, total) = progress(&store);
    let st = store.snapshot();
    Ok(Json(RoundView {
        round_number: st.round_number,
        prompt_version_id: st.prompt_version_id,
        schema: st.schema,
        gate: st.gate,
        closed: st.closed,
        labelled,
        total,
    }))
}

async fn list_items(State(s): State<Arc<AppState>>, Query(q): Query<ItemQuery>) -> ApiResult<ItemList> {
    let store = s.store()?;
    let items = match q.status.as_deref() {
        None | Some("pending") => store.pending_items(),
        Some("all") => store.snapshot().items,
        Some(other) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "bad_request",
                format!("status must be `pending` or `all`, not `{other}`"),
            ))
        }
    };
    let (labelled, total) = progress(&store);
    Ok(Json(ItemList {
        items: items.iter().map(|i| item_view(&store, i)).collect(),
        labelled,
        total,
    }))
}

async fn get_item(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ItemView> {
    let store = s.store()?;
    let item = store
        .item(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_item", format!("item {id} is not in this round")))?;
    Ok(Json(item_view(&store, &item)))
}

async fn post_label(
    State(s): State<Arc<AppState>>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> ApiResult<LabelResponse> {
    let Json(req) = body?;
    let store = s.store()?;
    let st = store.snapshot();
    if st.closed {
        return Err(Error::RoundClosed(st.round_number).into());
    }
    if store.item(&req.item_id).is_none() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_item",
            format!("item {} is not in this round", req.item_id),
        ));
    }
    let Some(task) = st.schema.task(&req.task) else {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "unknown_task",
            format!("unknown task `{}`", req.task),
        ));
    };
    if !task.has_category(&req.label) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "illegal_category",
            format!("`{}` is not a category of task `{}`", req.label, req.task),
        ));
    }
    let outcome = store.submit_label(&req.item_id, &req.task, &req.label, req.rationale.as_deref())?;
    let (labelled, total) = progress(&store);
    Ok(Json(LabelResponse {
        outcome,
        item_id: req.item_id,
        task: req.task,
        label: req.label,
        labelled,
        total,
    }))
}

async fn get_agreement(State(s): State<Arc<AppState>>) -> ApiResult<AgreementView> {
    Ok(Json(s.store()?.agreement()?))
}

async fn get_disagreements(State(s): State<Arc<AppState>>) -> ApiResult<serde_json::Value> {
    let rows: Vec<DisagreementRow> = s.store()?.disagreements()?;
    Ok(Json(json!({ "rows": rows })))
}

async fn post_advance(
    State(s): State<Arc<AppState>>,
    body: Result<Json<AdvanceRequest>, JsonRejection>,
) -> ApiResult<AdvanceResponse> {
    let Json(req) = body?;
    let store = s.store()?;
    let st = store.snapshot();
    if st.closed {
        return Err(Error::RoundClosed(st.round_number).into());
    }
    match store.agreement()? {
        AgreementView::Incomplete { labelled, total } => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "round_incomplete",
                format!("{labelled}/{total} items labelled"),
            ))
        }
        AgreementView::Complete { decision, .. } => {
            let has_notes = req.notes.as_deref().is_some_and(|n| !n.trim().is_empty());
            if !decision.passed() && !has_notes {
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "notes_required",
                    "the gate asks for refinement; notes are required to close the round",
                ));
            }
        }
    }
    if let Some(p) = &req.next_prompt_version_id {
        if PromptLedger::open(s.out_dir.join("prompts.jsonl"))?.get(p).is_none() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "unknown_prompt_version",
                format!("prompt version {p} is not registered"),
            ));
        }
    }
    let (round, next) = close_round(
        &s.out_dir,
        &store,
        req.notes.as_deref(),
        req.reuse_sample,
        req.next_prompt_version_id.as_deref(),
    )?;
    Ok(Json(AdvanceResponse { round, next }))
}

async fn get_rounds(State(s): State<Arc<AppState>>) -> ApiResult<serde_json::Value> {
    let ledger = RoundLedger::open(&s.out_dir.join("rounds.jsonl"))?;
    Ok(Json(json!({ "rounds": ledger.rounds() })))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/round", get(get_round))
        .route("/v1/items", get(list_items))
        .route("/v1/items/{id}", get(get_item))
        .route("/v1/labels", post(post_label))
        .route("/v1/agreement", get(get_agreement))
        .route("/v1/disagreements", get(get_disagreements))
        .route("/v1/rounds/advance", post(post_advance))
        .route("/v1/rounds", get(get_rounds))
        .fallback(not_found)
        .with_state(state)
}

/// A server running on its own thread; dropping it shuts the server down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background thread.
pub fn spawn(state: AppState, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let local = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::new(state));
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(ServerHandle {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

pub(crate) fn serve_blocking(ctx: Context, bind: SocketAddr, round: Option<PathBuf>) -> anyhow::Result<()> {
    if !bind.ip().is_loopback() {
        log::warn!("binding to non-loopback address {bind}; the API has no authentication");
    }
    let handle = spawn(AppState::new(&ctx.out_dir, round), bind)?;
    println!("listening on {}", handle.url("/v1"));
    let mut handle = handle;
    match handle.thread.take().map(JoinHandle::join) {
        Some(Ok(r)) => Ok(r?),
        Some(Err(_)) => anyhow::bail!("server thread panicked"),
        None => Ok(()),
    }
}
