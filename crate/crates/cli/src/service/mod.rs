//! HTTP service exposing the live simulator to an operator console.
//!
//! Utterances are translated into a preview that only runs once confirmed;
//! raw commands go straight onto the queue. Telemetry is pushed as
//! server-sent events.

mod executor;
mod telemetry;

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use crossbeam_channel::{Sender, TrySendError};
use edgebot_core::command::ParseDiagnostic;
use edgebot_core::config::RobotConfig;
use edgebot_core::drivetrain::{compile, DriveDefaults};
use edgebot_core::parse_sequence;
use edgebot_core::simulator::{Arena, RobotState, Simulator};
use edgebot_core::translator::{translate, Backend, PromptTemplate};
use edgebot_core::calibration::CalibrationSet;
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

use executor::{Control, Executor, Job};
pub use executor::StopReport;
pub use telemetry::{MessageKind, ServiceMessage, Telemetry};

pub struct ServiceOptions {
    pub config: RobotConfig,
    pub calibration: CalibrationSet,
    pub backend: Arc<dyn Backend>,
    pub template: PromptTemplate,
    /// Simulated seconds per wall-clock second; 0 runs unpaced.
    pub time_scale: f64,
}

impl ServiceOptions {
    pub fn new(config: RobotConfig, backend: Arc<dyn Backend>) -> anyhow::Result<Self> {
        let calibration = config.calibration()?;
        Ok(Self { config, calibration, backend, template: PromptTemplate::default(), time_scale: 1.0 })
    }
}

#[derive(Debug, Clone, Serialize)]
pub(crate) struct RobotView {
    pub state: RobotState,
    pub busy: bool,
    pub active_command: Option<u64>,
}

/// A translated utterance awaiting confirmation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub id: u64,
    pub utterance: String,
    pub backend: String,
    /// Canonical command string, if the output was valid.
    pub dsl: Option<String>,
    pub raw_output: String,
    pub valid: bool,
    pub diagnostics: Vec<ParseDiagnostic>,
    pub latency_s: f64,
}

#[derive(Default)]
struct Previews {
    pending: Option<Preview>,
    last: Option<Preview>,
}

pub(crate) struct Shared {
    pub robot: RwLock<RobotView>,
    pub queue_depth: AtomicUsize,
    previews: Mutex<Previews>,
    next_id: AtomicU64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceState {
    pub robot: RobotState,
    pub busy: bool,
    pub active_command: Option<u64>,
    pub queue_depth: usize,
    pub queue_capacity: usize,
    pub pending_preview: Option<Preview>,
    pub last_translation: Option<Preview>,
    pub arena: Arena,
    pub dt: f64,
    pub drive: DriveDefaults,
    pub backend: String,
}

#[derive(Clone)]
struct App {
    shared: Arc<Shared>,
    jobs: Sender<Job>,
    control: Sender<Control>,
    telemetry: Telemetry,
    backend: Arc<dyn Backend>,
    template: Arc<PromptTemplate>,
    calibration: Arc<CalibrationSet>,
    config: Arc<RobotConfig>,
}

/// Stops the executor thread when dropped.
pub struct ExecutorGuard {
    control: Sender<Control>,
    thread: Option<thread::JoinHandle<()>>,
}

impl Drop for ExecutorGuard {
    fn drop(&mut self) {
        let _ = self.control.send(Control::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Builds the router and starts the executor.
pub fn router(opts: ServiceOptions) -> anyhow::Result<(Router, ExecutorGuard)> {
    let cfg = opts.config;
    let sim = Simulator::new(cfg.arena.clone(), cfg.sim, opts.calibration.clone())?;
    let capacity = cfg.queue_capacity.max(1);
    let (jobs_tx, jobs_rx) = crossbeam_channel::bounded(capacity);
    let (control_tx, control_rx) = crossbeam_channel::unbounded();
    let shared = Arc::new(Shared {
        robot: RwLock::new(RobotView { state: sim.state().clone(), busy: false, active_command: None }),
        queue_depth: AtomicUsize::new(0),
        previews: Mutex::new(Previews::default()),
        next_id: AtomicU64::new(1),
    });
    let telemetry = Telemetry::new(1024);
    // Pose and sensor updates go out in pairs, so a pair every 2/hz keeps
    // the stream at or under `telemetry_hz` messages per second.
    let hz = if cfg.telemetry_hz > 0.0 { cfg.telemetry_hz } else { 30.0 };
    let thread = Executor {
        sim,
        jobs: jobs_rx,
        control: control_rx,
        shared: Arc::clone(&shared),
        telemetry: telemetry.clone(),
        time_scale: opts.time_scale,
        telemetry_period: Duration::from_secs_f64(2.0 / hz),
    }
    .spawn();
    let app = App {
        shared,
        jobs: jobs_tx,
        control: control_tx.clone(),
        telemetry,
        backend: opts.backend,
        template: Arc::new(opts.template),
        calibration: Arc::new(opts.calibration),
        config: Arc::new(cfg),
    };
    let router = Router::new()
        .route("/state", get(get_state))
        .route("/utterance", post(post_utterance))
        .route("/confirm", post(post_confirm))
        .route("/command", post(post_command))
        .route("/stop", post(post_stop))
        .route("/reset", post(post_reset))
        .route("/events", get(get_events))
        .with_state(app);
    Ok((router, ExecutorGuard { control: control_tx, thread: Some(thread) }))
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    diagnostic: Option<ParseDiagnostic>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), diagnostic: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.code, "message": self.message, "diagnostic": self.diagnostic});
        (self.status, Json(body)).into_response()
    }
}

impl App {
    fn fail(&self, e: ApiError) -> ApiError {
        self.telemetry.emit(MessageKind::Error, json!({"error": e.code, "message": e.message}));
        e
    }

    /// Validates, compiles and queues a command string.
    fn enqueue(&self, dsl: &str) -> Result<Json<serde_json::Value>, ApiError> {
        let seq = parse_sequence(dsl).map_err(|d| {
            let mut e = ApiError::new(StatusCode::BAD_REQUEST, "parse", d.to_string());
            e.diagnostic = Some(d);
            self.fail(e)
        })?;
        let plan = compile(&seq, &self.calibration, &self.config.drive)
            .map_err(|e| self.fail(ApiError::new(StatusCode::BAD_REQUEST, "plan", e.to_string())))?;
        let id = self.shared.next_id.fetch_add(1, Ordering::SeqCst);
        let wire = seq.to_string();
        self.shared.queue_depth.fetch_add(1, Ordering::SeqCst);
        match self.jobs.try_send(Job { id, dsl: wire.clone(), plan }) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => {
                self.shared.queue_depth.fetch_sub(1, Ordering::SeqCst);
                return Err(self.fail(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "queue_full", "command queue is full")));
            }
            Err(TrySendError::Disconnected(_)) => {
                self.shared.queue_depth.fetch_sub(1, Ordering::SeqCst);
                return Err(self.fail(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "executor_down", "executor stopped")));
            }
        }
        let depth = self.shared.queue_depth.load(Ordering::SeqCst);
        let body = json!({"id": id, "dsl": wire, "status": "queued", "queue_depth": depth});
        self.telemetry.emit(MessageKind::Ack, body.clone());
        Ok(Json(body))
    }
}

async fn get_state(State(app): State<App>) -> Json<ServiceState> {
    let view = app.shared.robot.read().expect("robot view lock").clone();
    let previews = app.shared.previews.lock().expect("preview lock");
    Json(ServiceState {
        robot: view.state,
        busy: view.busy,
        active_command: view.active_command,
        queue_depth: app.shared.queue_depth.load(Ordering::SeqCst),
        queue_capacity: app.config.queue_capacity.max(1),
        pending_preview: previews.pending.clone(),
        last_translation: previews.last.clone(),
        arena: app.config.arena.clone(),
        dt: app.config.sim.dt,
        drive: app.config.drive,
        backend: app.backend.id().to_string(),
    })
}

#[derive(Deserialize)]
struct UtteranceBody {
    text: String,
}

async fn post_utterance(State(app): State<App>, Json(body): Json<UtteranceBody>) -> Result<Json<Preview>, ApiError> {
    if body.text.trim().is_empty() {
        return Err(app.fail(ApiError::new(StatusCode::BAD_REQUEST, "empty", "utterance is empty")));
    }
    let (backend, template, text) = (Arc::clone(&app.backend), Arc::clone(&app.template), body.text.clone());
    let outcome = tokio::task::spawn_blocking(move || translate(backend.as_ref(), &template, &text))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let result = outcome.map_err(|e| app.fail(ApiError::new(StatusCode::BAD_GATEWAY, "backend", e.to_string())))?;
    let preview = Preview {
        id: app.shared.next_id.fetch_add(1, Ordering::SeqCst),
        utterance: body.text,
        backend: app.backend.id().to_string(),
        dsl: result.wire(),
        valid: result.is_valid(),
        raw_output: result.raw_output,
        diagnostics: result.diagnostics,
        latency_s: result.latency_s,
    };
    {
        let mut p = app.shared.previews.lock().expect("preview lock");
        p.pending = Some(preview.clone());
        p.last = Some(preview.clone());
    }
    app.telemetry.emit(MessageKind::TranslationPreview, serde_json::to_value(&preview).expect("preview serializes"));
    Ok(Json(preview))
}

#[derive(Deserialize)]
struct ConfirmBody {
    id: u64,
}

async fn post_confirm(State(app): State<App>, Json(body): Json<ConfirmBody>) -> Result<Json<serde_json::Value>, ApiError> {
    let preview = {
        let mut p = app.shared.previews.lock().expect("preview lock");
        match &p.pending {
            Some(pending) if pending.id == body.id => p.pending.take().expect("checked above"),
            _ => {
                drop(p);
                return Err(app.fail(ApiError::new(
                    StatusCode::CONFLICT,
                    "stale_preview",
                    format!("preview {} is not the pending one", body.id),
                )));
            }
        }
    };
    let Some(dsl) = preview.dsl else {
        return Err(app.fail(ApiError::new(StatusCode::BAD_REQUEST, "parse", "preview holds no valid command")));
    };
    app.enqueue(&dsl)
}

#[derive(Deserialize)]
struct CommandBody {
    dsl: String,
}

async fn post_command(State(app): State<App>, Json(body): Json<CommandBody>) -> Result<Json<serde_json::Value>, ApiError> {
    app.enqueue(&body.dsl)
}

async fn post_stop(State(app): State<App>) -> Result<Json<StopReport>, ApiError> {
    let requested_at = app.shared.robot.read().expect("robot view lock").state.time;
    let (reply, rx) = oneshot::channel();
    app.control
        .send(Control::Stop { requested_at, reply })
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "executor_down", "executor stopped"))?;
    let report = rx.await.map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "executor_down", "executor stopped"))?;
    app.telemetry.emit(
        MessageKind::Ack,
        json!({"status": "stop", "stopped_at": report.stopped_at, "cleared": report.cleared}),
    );
    Ok(Json(report))
}

async fn post_reset(State(app): State<App>) -> Result<Json<RobotState>, ApiError> {
    let (reply, rx) = oneshot::channel();
    app.control
        .send(Control::Reset { reply })
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "executor_down", "executor stopped"))?;
    let state = rx.await.map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "executor_down", "executor stopped"))?;
    app.shared.previews.lock().expect("preview lock").pending = None;
    app.telemetry.emit(MessageKind::Ack, json!({"status": "reset"}));
    Ok(Json(state))
}

async fn get_events(State(app): State<App>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = app.telemetry.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(msg) => {
                    let ev = Event::default().event(msg.kind.as_str()).json_data(&msg).expect("message serializes");
                    return Some((Ok(ev), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

/// A service running on its own runtime thread.
pub struct RunningService {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl RunningService {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves on a background thread until dropped.
pub fn spawn(opts: ServiceOptions, addr: SocketAddr) -> anyhow::Result<RunningService> {
    let (router, guard) = router(opts)?;
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let thread = thread::Builder::new().name("service-http".into()).spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
            tokio::select! {
                r = axum::serve(listener, router) => {
                    if let Err(e) = r {
                        log::error!("service stopped: {e}");
                    }
                }
                _ = rx => {}
            }
        });
        // Open event streams die with the runtime.
        runtime.shutdown_timeout(Duration::from_millis(200));
        drop(guard);
    })?;
    Ok(RunningService { addr: local, shutdown: Some(tx), thread: Some(thread) })
}

/// Serves in the foreground until interrupted.
pub async fn serve(opts: ServiceOptions, addr: SocketAddr) -> anyhow::Result<()> {
    let (router, guard) = router(opts)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    // Event streams never end on their own, so a graceful drain would hang.
    tokio::select! {
        r = axum::serve(listener, router) => r?,
        _ = tokio::signal::ctrl_c() => log::info!("interrupted"),
    }
    drop(guard);
    Ok(())
}
