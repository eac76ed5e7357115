//! JSON API under /api/v1 over a live run or a replayed run directory.
//!
//! Reads take a consistent snapshot under the run's read lock. Mutations
//! are sent to the simulation thread as `Control` messages and answered
//! from there; a replayed run refuses them.

use std::convert::Infallible;
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{self, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use hatchsens_core::gateway::alerts::{AckError, AlertEvent};
use hatchsens_core::gateway::persist::Manifest;
use hatchsens_core::gateway::{CommandError, CommandRecord, ReadingQuery};
use hatchsens_core::parmi::PhaseEntry;
use hatchsens_core::{
    AdvanceError, Attestations, Command, Event, Gateway, HatchThresholds, ModelError, RunOutcome, RunPhase, SensorKind,
    Simulation,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};

pub const EVENT_BUFFER: usize = 4096;

pub enum Control {
    Ack { id: u64, who: String, reply: oneshot::Sender<Result<AlertEvent, AckError>> },
    Command { addr: u16, command: Command, reply: oneshot::Sender<Result<CommandRecord, CommandError>> },
    Thresholds { thr: HatchThresholds, reply: oneshot::Sender<Result<(), ModelError>> },
    Advance { confirm: Attestations, reply: oneshot::Sender<Result<RunPhase, AdvanceError>> },
    Stop { reply: oneshot::Sender<RunPhase> },
}

/// A finished run rebuilt from its directory.
pub struct ReplayView {
    pub gateway: Gateway,
    pub phases: Vec<PhaseEntry>,
    pub end_t: f64,
    pub outcome: Option<RunOutcome>,
}

#[derive(Clone)]
pub enum Backend {
    Live { sim: Arc<RwLock<Simulation>>, control: mpsc::Sender<Control> },
    Replay(Arc<ReplayView>),
}

#[derive(Clone)]
pub struct AppState {
    pub backend: Backend,
    pub manifest: Arc<Manifest>,
    pub events: broadcast::Sender<Event>,
}

struct View<'a> {
    gateway: &'a Gateway,
    history: &'a [PhaseEntry],
    now_s: f64,
    outcome: Option<RunOutcome>,
}

impl View<'_> {
    fn phase(&self) -> RunPhase {
        self.history.last().map_or(RunPhase::CulturePrep, |e| e.phase)
    }
}

impl AppState {
    pub fn live(
        sim: Arc<RwLock<Simulation>>,
        control: mpsc::Sender<Control>,
        manifest: Manifest,
        events: broadcast::Sender<Event>,
    ) -> AppState {
        AppState { backend: Backend::Live { sim, control }, manifest: Arc::new(manifest), events }
    }

    pub fn replay(view: ReplayView, manifest: Manifest) -> AppState {
        let (events, _) = broadcast::channel(1);
        AppState { backend: Backend::Replay(Arc::new(view)), manifest: Arc::new(manifest), events }
    }

    fn read_only(&self) -> bool {
        matches!(self.backend, Backend::Replay(_))
    }

    fn view<T>(&self, f: impl FnOnce(View<'_>) -> T) -> T {
        match &self.backend {
            Backend::Live { sim, .. } => {
                let sim = sim.read().unwrap_or_else(|e| e.into_inner());
                f(View {
                    gateway: sim.gateway(),
                    history: sim.orchestrator().history(),
                    now_s: sim.now_s(),
                    outcome: sim.outcome(),
                })
            }
            Backend::Replay(r) => {
                f(View { gateway: &r.gateway, history: &r.phases, now_s: r.end_t, outcome: r.outcome })
            }
        }
    }

    async fn control<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Control) -> Result<T, ApiError> {
        let Backend::Live { control, .. } = &self.backend else {
            return Err(ApiError::new(StatusCode::FORBIDDEN, "replayed runs are read-only"));
        };
        let (tx, rx) = oneshot::channel();
        let ended = || ApiError::new(StatusCode::CONFLICT, "run has ended");
        control.send(make(tx)).map_err(|_| ended())?;
        rx.await.map_err(|_| ended())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> ApiError {
        ApiError { status, body: json!({ "error": message.into() }) }
    }

    fn with(status: StatusCode, body: Value) -> ApiError {
        ApiError { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn to_json<T: Serialize>(v: &T) -> Json<Value> {
    Json(serde_json::to_value(v).expect("api values serialize"))
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("bad request body: {e}")))
}

/// Node addresses in paths and queries may be decimal or 0x-prefixed hex.
pub fn parse_addr(s: &str) -> Option<u16> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u16::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/run", get(get_run))
        .route("/run/stop", post(post_stop))
        .route("/hatch", get(get_hatch))
        .route("/readings", get(get_readings))
        .route("/alerts", get(get_alerts))
        .route("/alerts/{id}/ack", post(post_ack))
        .route("/nodes", get(get_nodes))
        .route("/nodes/{addr}/command", post(post_command))
        .route("/commands/{id}", get(get_command))
        .route("/thresholds", get(get_thresholds).put(put_thresholds))
        .route("/phase", get(get_phase))
        .route("/phase/advance", post(post_advance))
        .route("/stream", get(stream));
    Router::new().nest("/api/v1", api).with_state(state)
}

fn wall_clock(manifest: &Manifest, sim_s: f64) -> Option<String> {
    let accel = manifest.accel?;
    let epoch = chrono::DateTime::parse_from_rfc3339(&manifest.epoch_wall).ok()?;
    let offset = chrono::Duration::milliseconds((sim_s / accel * 1000.0).round() as i64);
    Some((epoch + offset).to_rfc3339())
}

async fn get_run(State(st): State<AppState>) -> ApiResult {
    let (phase, now_s, outcome) = st.view(|v| (v.phase(), v.now_s, v.outcome));
    Ok(Json(json!({
        "manifest": &*st.manifest,
        "read_only": st.read_only(),
        "phase": phase,
        "outcome": outcome,
        "clock": { "sim_s": now_s, "wall": wall_clock(&st.manifest, now_s) },
    })))
}

async fn get_hatch(State(st): State<AppState>) -> ApiResult {
    Ok(st.view(|v| to_json(&v.gateway.hatch(v.now_s))))
}

#[derive(Debug, Deserialize)]
struct ReadingsParams {
    kind: Option<String>,
    from: Option<u32>,
    to: Option<u32>,
    node: Option<String>,
}

async fn get_readings(State(st): State<AppState>, Query(p): Query<ReadingsParams>) -> ApiResult {
    let kind = match p.kind.as_deref() {
        Some(name) => Some(
            SensorKind::from_name(name)
                .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("unknown sensor kind '{name}'")))?,
        ),
        None => None,
    };
    let node = match p.node.as_deref() {
        Some(s) => Some(
            parse_addr(s).ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("bad node address '{s}'")))?,
        ),
        None => None,
    };
    let q = ReadingQuery { kind, node, from: p.from, to: p.to };
    Ok(st.view(|v| to_json(&v.gateway.query_readings(&q))))
}

#[derive(Debug, Deserialize)]
struct AlertsParams {
    open: Option<bool>,
}

async fn get_alerts(State(st): State<AppState>, Query(p): Query<AlertsParams>) -> ApiResult {
    Ok(st.view(|v| {
        let alerts: Vec<&AlertEvent> =
            v.gateway.alerts().all().filter(|a| p.open.is_none_or(|open| a.is_open() == open)).collect();
        to_json(&alerts)
    }))
}

#[derive(Debug, Deserialize)]
struct AckBody {
    who: String,
}

async fn post_ack(State(st): State<AppState>, Path(id): Path<u64>, body: Bytes) -> ApiResult {
    let AckBody { who } = parse_body(&body)?;
    if who.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "who must not be empty"));
    }
    match st.control(|reply| Control::Ack { id, who, reply }).await? {
        Ok(alert) => Ok(to_json(&alert)),
        Err(e @ AckError::NotFound(_)) => Err(ApiError::new(StatusCode::NOT_FOUND, e.to_string())),
        Err(e @ AckError::AlreadyAcked(_)) => Err(ApiError::new(StatusCode::CONFLICT, e.to_string())),
    }
}

async fn get_nodes(State(st): State<AppState>) -> ApiResult {
    Ok(st.view(|v| to_json(&v.gateway.nodes().collect::<Vec<_>>())))
}

async fn post_command(State(st): State<AppState>, Path(addr): Path<String>, body: Bytes) -> ApiResult {
    let addr = parse_addr(&addr)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("bad node address '{addr}'")))?;
    let command: Command = parse_body(&body)?;
    match st.control(|reply| Control::Command { addr, command, reply }).await? {
        Ok(rec) => Ok(Json(json!({ "command_id": rec.id, "status": rec.status }))),
        Err(e @ CommandError::NotFound(_)) => Err(ApiError::new(StatusCode::NOT_FOUND, e.to_string())),
        Err(e @ CommandError::InvalidArgument(_)) => Err(ApiError::new(StatusCode::BAD_REQUEST, e.to_string())),
    }
}

async fn get_command(State(st): State<AppState>, Path(id): Path<u64>) -> ApiResult {
    st.view(|v| match v.gateway.command(id) {
        Some(rec) => Ok(to_json(rec)),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("command {id} not found"))),
    })
}

async fn get_thresholds(State(st): State<AppState>) -> ApiResult {
    Ok(st.view(|v| to_json(v.gateway.thresholds())))
}

async fn put_thresholds(State(st): State<AppState>, body: Bytes) -> ApiResult {
    let thr: HatchThresholds = parse_body(&body)?;
    thr.validate().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let applied = thr.clone();
    st.control(|reply| Control::Thresholds { thr, reply })
        .await?
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok(to_json(&applied))
}

async fn get_phase(State(st): State<AppState>) -> ApiResult {
    Ok(st.view(|v| {
        Json(json!({
            "current": v.phase(),
            "next": v.phase().next(),
            "history": v.history,
            "sim_s": v.now_s,
        }))
    }))
}

/// Operator confirmations. Anything not stated is not confirmed.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AdvanceBody {
    culture_prepared: bool,
    aerator_on: bool,
}

async fn post_advance(State(st): State<AppState>, body: Bytes) -> ApiResult {
    let b: AdvanceBody = if body.is_empty() { AdvanceBody::default() } else { parse_body(&body)? };
    let confirm = Attestations { culture_prepared: b.culture_prepared, aerator_on: b.aerator_on };
    match st.control(|reply| Control::Advance { confirm, reply }).await? {
        Ok(phase) => Ok(Json(json!({ "phase": phase }))),
        Err(e) => Err(ApiError::with(StatusCode::CONFLICT, serde_json::to_value(&e).expect("serializes"))),
    }
}

async fn post_stop(State(st): State<AppState>) -> ApiResult {
    let phase = st.control(|reply| Control::Stop { reply }).await?;
    Ok(Json(json!({ "phase": phase })))
}

async fn stream(State(st): State<AppState>) -> Sse<impl Stream<Item = Result<sse::Event, Infallible>>> {
    let rx = st.events.subscribe();
    let events = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let msg = sse::Event::default().event(ev.tag()).json_data(&ev).expect("events serialize");
                    return Some((Ok(msg), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(events).keep_alive(sse::KeepAlive::new().interval(Duration::from_secs(15)))
}
