//! The single consumer of the command queue. Owns the simulator and steps it
//! in (optionally scaled) real time.

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{select, Receiver};
use edgebot_core::drivetrain::ActuationPlan;
use edgebot_core::simulator::{RobotState, Simulator, Tick};
use edgebot_core::ultrasonic::calibrate_reading;
use log::warn;
use serde::Serialize;
use serde_json::json;
use tokio::sync::oneshot;

use super::telemetry::{MessageKind, Telemetry};
use super::Shared;

const IDLE_POLL: Duration = Duration::from_millis(25);

pub(crate) struct Job {
    pub id: u64,
    pub dsl: String,
    pub plan: ActuationPlan,
}

#[derive(Debug, Clone, Serialize)]
pub struct StopReport {
    /// Simulated time of the last published step when the request arrived.
    pub requested_at: f64,
    /// Simulated time at which the motors stopped.
    pub stopped_at: f64,
    pub state: RobotState,
    /// The command that was running, if any.
    pub interrupted: Option<u64>,
    /// Queued commands discarded.
    pub cleared: usize,
}

pub(crate) enum Control {
    Stop { requested_at: f64, reply: oneshot::Sender<StopReport> },
    Reset { reply: oneshot::Sender<RobotState> },
    Shutdown,
}

pub(crate) struct Executor {
    pub sim: Simulator,
    pub jobs: Receiver<Job>,
    pub control: Receiver<Control>,
    pub shared: Arc<Shared>,
    pub telemetry: Telemetry,
    /// Simulated seconds per wall-clock second; 0 runs unpaced.
    pub time_scale: f64,
    /// Minimum wall time between telemetry pairs.
    pub telemetry_period: Duration,
}

impl Executor {
    pub fn spawn(self) -> thread::JoinHandle<()> {
        thread::Builder::new().name("service-executor".into()).spawn(move || self.run()).expect("spawn executor")
    }

    fn run(mut self) {
        let mut current: Option<(u64, String)> = None;
        let mut last_emit: Option<Instant> = None;
        let mut dirty = false;
        loop {
            while let Ok(c) = self.control.try_recv() {
                if !self.handle_control(c, &mut current) {
                    return;
                }
                dirty = true;
            }
            if !self.sim.is_busy() {
                let completed = current.take();
                if completed.is_some() {
                    self.publish(None);
                    dirty = true;
                }
                if dirty {
                    // Let the budget refill so the final pose is never dropped.
                    if let Some(t) = last_emit {
                        let wait = self.telemetry_period.saturating_sub(t.elapsed());
                        thread::sleep(wait);
                    }
                    self.emit_telemetry();
                    last_emit = Some(Instant::now());
                    dirty = false;
                }
                // The final pose precedes the ack, so clients can stop listening on it.
                if let Some((id, dsl)) = completed {
                    self.telemetry.emit(MessageKind::Ack, json!({"id": id, "dsl": dsl, "status": "completed"}));
                }
                select! {
                    recv(self.control) -> c => {
                        let Ok(c) = c else { return };
                        if !self.handle_control(c, &mut current) {
                            return;
                        }
                        dirty = true;
                    }
                    recv(self.jobs) -> job => {
                        let Ok(job) = job else { return };
                        self.shared.queue_depth.fetch_sub(1, Ordering::SeqCst);
                        self.telemetry.emit(MessageKind::Ack, json!({"id": job.id, "dsl": job.dsl, "status": "started"}));
                        current = Some((job.id, job.dsl));
                        self.sim.start_plan(job.plan);
                        self.publish(current.as_ref().map(|c| c.0));
                    }
                    default(IDLE_POLL) => {}
                }
                continue;
            }

            let began = Instant::now();
            match self.sim.tick(None) {
                Ok(Tick::Stepped(_)) => {
                    self.publish(current.as_ref().map(|c| c.0));
                    dirty = true;
                }
                Ok(Tick::Idle) => {}
                Err(e) => {
                    warn!("plan failed: {e}");
                    self.sim.halt();
                    if let Some((id, dsl)) = current.take() {
                        self.telemetry.emit(MessageKind::Error, json!({"id": id, "dsl": dsl, "message": e.to_string()}));
                    }
                }
            }
            if last_emit.is_none_or(|t| t.elapsed() >= self.telemetry_period) {
                self.emit_telemetry();
                last_emit = Some(Instant::now());
                dirty = false;
            }
            if self.time_scale > 0.0 {
                let step = Duration::from_secs_f64(self.sim.config().dt / self.time_scale);
                if let Some(rest) = step.checked_sub(began.elapsed()) {
                    thread::sleep(rest);
                }
            }
        }
    }

    /// Returns false on shutdown.
    fn handle_control(&mut self, c: Control, current: &mut Option<(u64, String)>) -> bool {
        match c {
            Control::Stop { requested_at, reply } => {
                self.sim.halt();
                let cleared = self.drain();
                let interrupted = current.take().map(|(id, dsl)| {
                    self.telemetry.emit(MessageKind::Ack, json!({"id": id, "dsl": dsl, "status": "stopped"}));
                    id
                });
                self.publish(None);
                let state = self.sim.state().clone();
                let _ = reply.send(StopReport { requested_at, stopped_at: state.time, state, interrupted, cleared });
                true
            }
            Control::Reset { reply } => {
                self.drain();
                current.take();
                self.sim.reset();
                self.publish(None);
                let _ = reply.send(self.sim.state().clone());
                true
            }
            Control::Shutdown => false,
        }
    }

    fn drain(&mut self) -> usize {
        let mut n = 0;
        while self.jobs.try_recv().is_ok() {
            self.shared.queue_depth.fetch_sub(1, Ordering::SeqCst);
            n += 1;
        }
        n
    }

    fn publish(&self, active: Option<u64>) {
        let mut view = self.shared.robot.write().expect("robot view lock");
        view.state = self.sim.state().clone();
        view.busy = self.sim.is_busy();
        view.active_command = if view.busy { active } else { None };
    }

    fn emit_telemetry(&self) {
        let s = self.sim.state();
        let p = s.pose;
        self.telemetry.emit(
            MessageKind::PoseUpdate,
            json!({"t": s.time, "x": p.x, "y": p.y, "heading": p.heading, "action": s.active_action}),
        );
        let raw_cm = calibrate_reading(&self.sim.calibration().range_sensor, s.raw_sensor).ok();
        self.telemetry.emit(
            MessageKind::SensorUpdate,
            json!({"t": s.time, "raw": s.raw_sensor, "raw_cm": raw_cm, "filtered_cm": s.filtered_sensor}),
        );
    }
}
