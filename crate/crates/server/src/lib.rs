//! HTTP+JSON front end of the decision-support service.
//!
//! | Method | Path | Body | Reply |
//! |---|---|---|---|
//! | GET | `/health` | | [`Health`] |
//! | GET | `/routes/{id}/stops/{j}/trips` | | `[TripRow]` |
//! | POST | `/trips/{id}/hold-confirm` | [`ConfirmBody`] | `InterventionEntry` |
//! | POST | `/trips/{id}/cancel` | [`ActorBody`] | `InterventionEntry` |
//! | POST | `/trips/{id}/restore` | [`ActorBody`] | `InterventionEntry` |
//! | POST | `/trips/{id}/short-turn-note` | [`NoteBody`] | `InterventionEntry` |
//! | POST | `/feeds/predictions` | `[PredictionRecord]` | `IngestSummary` |
//! | GET | `/log?since=N` | | [`LogPage`] |
//! | GET | `/diagnostics` | | `Diagnostics` |
//!
//! Failures reply with [`ApiError`] as `{"code": .., "message": ..}`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use headway_core::dss::{
    write_interventions, Diagnostics, IngestSummary, InterventionEntry, PredictionRecord, Service, ServiceConfig,
    ServiceError, TripRow,
};
use headway_core::io::{load_scenario, IoError, ThresholdOverrides};
use headway_core::policy::{NetError, QNetwork};
use headway_core::time::Seconds;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Service settings read from one TOML file, then overridden by environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    /// Scenario file supplying route, schedule and demand.
    pub scenario: PathBuf,
    /// Trained Q-network; without one the service runs fallback-only.
    pub model: Option<PathBuf>,
    /// Directory receiving `interventions.csv` after every mutation.
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub service: ServiceConfig,
    #[serde(default)]
    pub thresholds: ThresholdOverrides,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {name}: cannot parse `{value}`")]
    Env { name: &'static str, value: String },
    #[error(transparent)]
    Scenario(#[from] IoError),
    #[error("model {path}: {source}")]
    Model { path: PathBuf, source: NetError },
}

pub const ENV_PORT: &str = "HEADWAY_PORT";
pub const ENV_BIND: &str = "HEADWAY_BIND";
pub const ENV_DATA_DIR: &str = "HEADWAY_DATA_DIR";
pub const ENV_SCENARIO: &str = "HEADWAY_SCENARIO";
pub const ENV_MODEL: &str = "HEADWAY_MODEL";
pub const ENV_STALENESS: &str = "HEADWAY_STALENESS_BOUND";
pub const ENV_MATCH_WINDOW: &str = "HEADWAY_MATCH_WINDOW";

impl ServerConfig {
    pub fn new(scenario: PathBuf) -> Self {
        Self {
            bind: default_bind(),
            port: default_port(),
            scenario,
            model: None,
            data_dir: None,
            service: ServiceConfig::default(),
            thresholds: ThresholdOverrides::default(),
        }
    }

    /// Parses a config file. Relative paths inside it resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.scenario);
        cfg.model.as_mut().map(rebase);
        cfg.data_dir.as_mut().map(rebase);
        Ok(cfg)
    }

    /// Applies `HEADWAY_*` overrides from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(name: &'static str, value: String) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError::Env { name, value })
        }
        if let Some(v) = lookup(ENV_PORT) {
            self.port = parse(ENV_PORT, v)?;
        }
        if let Some(v) = lookup(ENV_BIND) {
            self.bind = v;
        }
        if let Some(v) = lookup(ENV_DATA_DIR) {
            self.data_dir = Some(v.into());
        }
        if let Some(v) = lookup(ENV_SCENARIO) {
            self.scenario = v.into();
        }
        if let Some(v) = lookup(ENV_MODEL) {
            self.model = Some(v.into());
        }
        if let Some(v) = lookup(ENV_STALENESS) {
            self.service.staleness_bound = parse::<Seconds>(ENV_STALENESS, v)?;
        }
        if let Some(v) = lookup(ENV_MATCH_WINDOW) {
            self.service.match_window = Some(parse::<Seconds>(ENV_MATCH_WINDOW, v)?);
        }
        Ok(())
    }

    /// Loads the scenario and model and builds the service.
    pub fn build_service(&self) -> Result<Service, ConfigError> {
        let mut scenario = load_scenario(&self.scenario)?;
        scenario.thresholds = self.thresholds.apply(scenario.thresholds);
        let net = match &self.model {
            Some(path) => {
                Some(QNetwork::load(path, Some(&scenario.thresholds)).map_err(|source| ConfigError::Model { path: path.clone(), source })?)
            }
            None => None,
        };
        Ok(Service::new(&scenario, net, self.service))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into(), status: status.as_u16() }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match e {
            ServiceError::UnknownTrip(_) => StatusCode::NOT_FOUND,
            ServiceError::NotControlStop(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::CONFLICT,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub route_id: String,
    pub model_loaded: bool,
    /// Newest feed time, seconds since service start.
    pub clock: Seconds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmBody {
    pub stop: usize,
    pub actor: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorBody {
    pub actor: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteBody {
    pub stop: Option<usize>,
    pub actor: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogQuery {
    #[serde(default)]
    pub since: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogPage {
    pub entries: Vec<InterventionEntry>,
    /// Pass as `since` to fetch only newer entries.
    pub last_id: u64,
}

/// Shared state. The mutex queues writers in arrival order, so every mutation
/// and every table read sees one consistent snapshot.
#[derive(Clone)]
pub struct AppState {
    service: Arc<Mutex<Service>>,
    route_id: String,
    data_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(service: Service, data_dir: Option<PathBuf>) -> Self {
        let route_id = service.route().route_id.clone();
        Self { service: Arc::new(Mutex::new(service)), route_id, data_dir }
    }

    pub fn service(&self) -> &Arc<Mutex<Service>> {
        &self.service
    }

    fn persist(&self, service: &Service, entry: &InterventionEntry) {
        eprintln!(
            "intervention {} {:?} trip={} stop={:?} actor={}",
            entry.entry_id, entry.kind, entry.trip_id, entry.stop, entry.actor
        );
        if let Some(dir) = &self.data_dir {
            if let Err(e) = write_interventions(&dir.join("interventions.csv"), service.log().entries()) {
                eprintln!("cannot persist intervention log: {e}");
            }
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/routes/{route}/stops/{stop}/trips", get(trips))
        .route("/trips/{trip}/hold-confirm", post(confirm))
        .route("/trips/{trip}/cancel", post(cancel))
        .route("/trips/{trip}/restore", post(restore))
        .route("/trips/{trip}/short-turn-note", post(short_turn))
        .route("/feeds/predictions", post(feed))
        .route("/log", get(log))
        .route("/diagnostics", get(diagnostics))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

async fn health(State(st): State<AppState>) -> Json<Health> {
    let s = st.service.lock().await;
    Json(Health {
        status: "ok".into(),
        version: VERSION.into(),
        route_id: st.route_id.clone(),
        model_loaded: s.has_model(),
        clock: s.clock(),
    })
}

async fn trips(
    State(st): State<AppState>,
    UrlPath((route, stop)): UrlPath<(String, String)>,
) -> Result<Json<Vec<TripRow>>, ApiError> {
    if route != st.route_id {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_route", format!("unknown route `{route}`")));
    }
    let stop: usize = stop
        .parse()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("invalid stop `{stop}`")))?;
    Ok(Json(st.service.lock().await.upcoming_trips(stop)?))
}

async fn confirm(
    State(st): State<AppState>,
    UrlPath(trip): UrlPath<String>,
    body: Result<Json<ConfirmBody>, JsonRejection>,
) -> Result<Json<InterventionEntry>, ApiError> {
    let Json(body) = body?;
    let mut s = st.service.lock().await;
    let entry = s.confirm_hold(&trip, body.stop, &body.actor)?;
    st.persist(&s, &entry);
    Ok(Json(entry))
}

async fn cancel(
    State(st): State<AppState>,
    UrlPath(trip): UrlPath<String>,
    body: Result<Json<ActorBody>, JsonRejection>,
) -> Result<Json<InterventionEntry>, ApiError> {
    let Json(body) = body?;
    let mut s = st.service.lock().await;
    let entry = s.cancel_trip(&trip, &body.actor)?;
    st.persist(&s, &entry);
    Ok(Json(entry))
}

async fn restore(
    State(st): State<AppState>,
    UrlPath(trip): UrlPath<String>,
    body: Result<Json<ActorBody>, JsonRejection>,
) -> Result<Json<InterventionEntry>, ApiError> {
    let Json(body) = body?;
    let mut s = st.service.lock().await;
    let entry = s.restore_trip(&trip, &body.actor)?;
    st.persist(&s, &entry);
    Ok(Json(entry))
}

async fn short_turn(
    State(st): State<AppState>,
    UrlPath(trip): UrlPath<String>,
    body: Result<Json<NoteBody>, JsonRejection>,
) -> Result<Json<InterventionEntry>, ApiError> {
    let Json(body) = body?;
    let mut s = st.service.lock().await;
    let entry = s.note_short_turn(&trip, body.stop, &body.actor, &body.note)?;
    st.persist(&s, &entry);
    Ok(Json(entry))
}

async fn feed(
    State(st): State<AppState>,
    body: Result<Json<Vec<PredictionRecord>>, JsonRejection>,
) -> Result<Json<IngestSummary>, ApiError> {
    let Json(batch) = body?;
    Ok(Json(st.service.lock().await.ingest(&batch)))
}

async fn log(
    State(st): State<AppState>,
    query: Result<Query<LogQuery>, QueryRejection>,
) -> Result<Json<LogPage>, ApiError> {
    let Query(q) = query?;
    let s = st.service.lock().await;
    let entries = s.log().since(q.since).to_vec();
    Ok(Json(LogPage { last_id: s.log().len() as u64, entries }))
}

async fn diagnostics(State(st): State<AppState>) -> Json<Diagnostics> {
    Json(st.service.lock().await.diagnostics())
}

/// Replays records into the shared state, sleeping the feed gaps scaled by `speed`.
pub async fn replay_into(state: AppState, records: Vec<PredictionRecord>, speed: f64) -> usize {
    let speed = if speed.is_finite() && speed > 0.0 { speed } else { 1.0 };
    let mut last: Option<Seconds> = None;
    let mut batches = 0;
    for batch in records.chunk_by(|a, b| a.timestamp == b.timestamp) {
        let t = batch[0].timestamp;
        if let Some(prev) = last {
            let gap = (t - prev).max(0) as f64 / speed;
            tokio::time::sleep(Duration::from_secs_f64(gap)).await;
        }
        last = Some(t);
        state.service.lock().await.ingest(batch);
        batches += 1;
    }
    batches
}

/// Binds and serves until ctrl-c.
pub async fn serve(cfg: &ServerConfig, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((cfg.bind.as_str(), cfg.port)).await?;
    eprintln!("headway service {VERSION} listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
