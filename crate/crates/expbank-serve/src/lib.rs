//! Wire-protocol service over an experience bank.
//!
//! Endpoints:
//!
//! * `POST /v1/search` - run wide / deep / deep_wide retrieval for a state
//! * `POST /v1/trajectories` - ingest trajectory records through the
//!   abstraction pipeline (requires a judge configuration)
//! * `GET /v1/stats` - bank summary with a q-value histogram
//!
//! Searches are lock-free reads of an immutable bank snapshot; ingestion
//! builds a new snapshot and swaps it in, so an in-flight search sees either
//! the pre- or post-ingestion bank, never a partial one. Handler output is
//! byte-for-byte the corresponding library call on the same snapshot.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State as AxumState;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use expbank::abstraction::{abstract_trajectory, AbstractError, AbstractionStats};
use expbank::embed::{EmbedError, Embedder};
use expbank::index::ExperienceBank;
use expbank::judge::Judge;
use expbank::model::{validate_trajectory, State, TrajectoryRecord};
use expbank::search::{
    deep_search, deep_wide_search, format_guidance, wide_search, GuidanceItem, GuidanceSet,
    SearchError, SearchParams,
};
use expbank::viewpoint::{registry_ids, ViewpointId};

/// Environment variable supplying the default listen address.
pub const LISTEN_ENV: &str = "EXPBANK_LISTEN";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8377";

/// Shared service state: the swappable bank snapshot, the embedding
/// provider, and an optional judge for ingestion.
pub struct AppState {
    bank: std::sync::RwLock<Arc<ExperienceBank>>,
    embedder: Arc<dyn Embedder>,
    judge: Option<Arc<dyn Judge>>,
    /// Serializes ingestions; searches never take it.
    ingest_lock: Mutex<()>,
}

impl AppState {
    pub fn new(
        bank: ExperienceBank,
        embedder: Arc<dyn Embedder>,
        judge: Option<Arc<dyn Judge>>,
    ) -> Self {
        Self {
            bank: std::sync::RwLock::new(Arc::new(bank)),
            embedder,
            judge,
            ingest_lock: Mutex::new(()),
        }
    }

    /// Current immutable bank snapshot.
    pub fn snapshot(&self) -> Arc<ExperienceBank> {
        self.bank.read().expect("bank lock").clone()
    }

    fn swap(&self, bank: ExperienceBank) {
        *self.bank.write().expect("bank lock") = Arc::new(bank);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Wide,
    Deep,
    DeepWide,
}

fn default_k() -> usize {
    expbank::search::DEFAULT_TOP_K
}

/// Wire form of a search call: the query state, the viewpoint sequence
/// (length 1 for wide mode), breadth k, and the mode.
#[derive(Debug, Deserialize)]
pub struct SearchRequest {
    pub state: State,
    pub viewpoints: Vec<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    pub mode: SearchMode,
}

#[derive(Debug, Serialize)]
pub struct SearchResponse {
    pub items: Vec<GuidanceItem>,
    pub rendered: String,
}

#[derive(Debug, Serialize)]
pub struct StatsResponse {
    pub experience_count: usize,
    pub dim: usize,
    pub viewpoints: Vec<ViewpointId>,
    pub delta: f64,
    /// Bucket i counts experiences with floor(q) == i; q = 10 lands in
    /// bucket 10. Buckets sum to `experience_count`.
    pub q_histogram: [usize; 11],
    pub source_outcome_counts: SourceOutcomeCounts,
}

#[derive(Debug, Serialize)]
pub struct SourceOutcomeCounts {
    pub correct: usize,
    pub incorrect: usize,
}

#[derive(Debug, Serialize)]
pub struct IngestResponse {
    pub stats: AbstractionStats,
    pub experience_count: usize,
}

/// Error payload: `{"error": "..."}` with the mapped status code.
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self { status: StatusCode::CONFLICT, message: message.into() }
    }

    fn unavailable(message: impl Into<String>) -> Self {
        Self { status: StatusCode::SERVICE_UNAVAILABLE, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(serde_json::json!({ "error": self.message }));
        (self.status, body).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rejection: JsonRejection) -> Self {
        ApiError::bad_request(rejection.body_text())
    }
}

fn map_search_error(err: SearchError) -> ApiError {
    match err {
        SearchError::InvalidParams(m) => ApiError::bad_request(m),
        SearchError::Embed(EmbedError::Unavailable(m)) => ApiError::unavailable(m),
        SearchError::Embed(EmbedError::DimensionMismatch { expected, got }) => {
            ApiError::conflict(format!("dimension mismatch: expected {expected}, got {got}"))
        }
        SearchError::Embed(e) => ApiError::bad_request(e.to_string()),
        SearchError::Index(expbank::index::IndexError::DimensionMismatch { expected, got }) => {
            ApiError::conflict(format!("dimension mismatch: expected {expected}, got {got}"))
        }
        SearchError::Index(e) => ApiError::bad_request(e.to_string()),
    }
}

/// Pure search dispatch over one snapshot; the handler is this plus JSON.
pub fn run_search(
    bank: &ExperienceBank,
    embedder: &dyn Embedder,
    request: &SearchRequest,
) -> Result<GuidanceSet, ApiError> {
    request
        .state
        .validate("search request")
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let viewpoints: Vec<ViewpointId> = request
        .viewpoints
        .iter()
        .map(|s| ViewpointId::parse(s))
        .collect::<Result<_, _>>()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    if viewpoints.is_empty() {
        return Err(ApiError::bad_request("viewpoints must not be empty"));
    }
    if request.k < 1 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    match request.mode {
        SearchMode::Wide => {
            if viewpoints.len() != 1 {
                return Err(ApiError::bad_request(format!(
                    "wide mode takes exactly one viewpoint, got {}",
                    viewpoints.len()
                )));
            }
            wide_search(bank, embedder, &request.state, viewpoints[0], request.k)
                .map_err(map_search_error)
        }
        SearchMode::Deep => {
            deep_search(bank, embedder, &request.state, &viewpoints).map_err(map_search_error)
        }
        SearchMode::DeepWide => {
            let params = SearchParams::new(request.k, viewpoints).map_err(map_search_error)?;
            deep_wide_search(bank, embedder, &request.state, &params).map_err(map_search_error)
        }
    }
}

async fn handle_search(
    AxumState(state): AxumState<Arc<AppState>>,
    body: Result<Json<SearchRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(request) = body?;
    let snapshot = state.snapshot();
    let embedder = state.embedder.clone();
    let set = tokio::task::spawn_blocking(move || run_search(&snapshot, embedder.as_ref(), &request))
        .await
        .map_err(|e| ApiError::unavailable(format!("search task failed: {e}")))??;
    let rendered = format_guidance(&set);
    Ok((StatusCode::OK, Json(SearchResponse { items: set.items, rendered })).into_response())
}

/// Ingestion over one snapshot: validates records, extends a copy of the
/// bank, and returns it with merged stats. Judge failures skip only the
/// affected trajectory; embedder failures abort the batch.
pub fn run_ingest(
    base: &ExperienceBank,
    embedder: &dyn Embedder,
    judge: &dyn Judge,
    records: Vec<TrajectoryRecord>,
) -> Result<(ExperienceBank, AbstractionStats), ApiError> {
    let mut seen = std::collections::HashSet::new();
    for record in &records {
        if !seen.insert(record.id.clone()) {
            return Err(ApiError::bad_request(format!("duplicate trajectory id {}", record.id)));
        }
    }
    let mut trajectories = Vec::with_capacity(records.len());
    for record in records {
        let trajectory =
            validate_trajectory(record).map_err(|e| ApiError::bad_request(e.to_string()))?;
        trajectories.push(trajectory);
    }

    let threshold = base.config().delta;
    let mut bank = base.clone();
    let mut stats = AbstractionStats::default();
    for trajectory in &trajectories {
        match abstract_trajectory(trajectory, judge, embedder, threshold) {
            Ok((experiences, t_stats)) => {
                stats.merge(&t_stats);
                for e in experiences {
                    bank.insert(e).map_err(|e| ApiError::bad_request(e.to_string()))?;
                }
            }
            Err(AbstractError::Judge(_)) => {
                stats.total += trajectory.len();
                stats.errors += trajectory.len();
            }
            Err(AbstractError::Embed(EmbedError::Unavailable(m))) => {
                return Err(ApiError::unavailable(m));
            }
            Err(e) => return Err(ApiError::bad_request(e.to_string())),
        }
    }
    Ok((bank, stats))
}

async fn handle_ingest(
    AxumState(state): AxumState<Arc<AppState>>,
    body: Result<Json<Vec<TrajectoryRecord>>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(records) = body?;
    let judge = state
        .judge
        .clone()
        .ok_or_else(|| ApiError::unavailable("no judge configured on this server"))?;

    // Single writer: snapshot-to-snapshot builds must not interleave.
    let _guard = state.ingest_lock.lock().await;
    let base = state.snapshot();
    let embedder = state.embedder.clone();
    let (bank, stats) = tokio::task::spawn_blocking(move || {
        run_ingest(&base, embedder.as_ref(), judge.as_ref(), records)
    })
    .await
    .map_err(|e| ApiError::unavailable(format!("ingest task failed: {e}")))??;

    let experience_count = bank.len();
    state.swap(bank);
    Ok((StatusCode::ACCEPTED, Json(IngestResponse { stats, experience_count })).into_response())
}

/// Stats summary of one snapshot.
pub fn bank_stats(bank: &ExperienceBank) -> StatsResponse {
    let mut q_histogram = [0usize; 11];
    let mut correct = 0;
    let mut incorrect = 0;
    for e in bank.experiences() {
        let bucket = (e.q_value.floor() as usize).min(10);
        q_histogram[bucket] += 1;
        if e.source_outcome {
            correct += 1;
        } else {
            incorrect += 1;
        }
    }
    StatsResponse {
        experience_count: bank.len(),
        dim: bank.dim(),
        viewpoints: registry_ids().to_vec(),
        delta: bank.config().delta,
        q_histogram,
        source_outcome_counts: SourceOutcomeCounts { correct, incorrect },
    }
}

async fn handle_stats(AxumState(state): AxumState<Arc<AppState>>) -> Response {
    let snapshot = state.snapshot();
    (StatusCode::OK, Json(bank_stats(&snapshot))).into_response()
}

/// Builds the service router around shared state.
pub fn build_router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/search", post(handle_search))
        .route("/v1/trajectories", post(handle_ingest))
        .route("/v1/stats", get(handle_stats))
        .with_state(state)
}

/// Binds and serves until the process is interrupted.
pub async fn serve(state: Arc<AppState>, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, build_router(state)).await
}
