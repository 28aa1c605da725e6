//! Differential-drive kinematic simulator with a simulated ultrasonic ranger.
//!
//! The robot is a disc that either translates along its heading or rotates in
//! place. Every step the range sensor ray-casts along the heading, the raw
//! reading passes through the range calibration and the moving-average
//! filter, and wall-guarded actions stop once the filtered distance reaches
//! their threshold.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{self, CalibrationError, CalibrationSet, LinModel, PolyModel};
use crate::drivetrain::{ActuationPlan, MotorAction, Movement};
use crate::ultrasonic::{self, NoiseModel, SmaFilter};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Degrees counter-clockwise from +x, in `[0, 360)`.
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: normalize_heading(heading) }
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Smallest absolute difference between two headings, in degrees.
pub fn heading_error(a: f64, b: f64) -> f64 {
    let d = normalize_heading(a - b);
    d.min(360.0 - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl Segment {
    pub fn new(a: (f64, f64), b: (f64, f64)) -> Self {
        Self { a, b }
    }

    /// Distance along the ray `origin + t * dir` (unit `dir`) to this segment.
    fn ray_hit(&self, origin: (f64, f64), dir: (f64, f64)) -> Option<f64> {
        let e = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let denom = dir.0 * e.1 - dir.1 * e.0;
        if denom.abs() < 1e-12 {
            return None;
        }
        let w = (self.a.0 - origin.0, self.a.1 - origin.1);
        let t = (w.0 * e.1 - w.1 * e.0) / denom;
        let u = (w.0 * dir.1 - w.1 * dir.0) / denom;
        (t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u)).then_some(t)
    }
}

/// Rectangular room centered on the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub width: f64,
    pub height: f64,
}

impl Room {
    fn half(&self) -> (f64, f64) {
        (self.width / 2.0, self.height / 2.0)
    }

    fn walls(&self) -> [Segment; 4] {
        let (hw, hh) = self.half();
        [
            Segment::new((-hw, -hh), (hw, -hh)),
            Segment::new((hw, -hh), (hw, hh)),
            Segment::new((hw, hh), (-hw, hh)),
            Segment::new((-hw, hh), (-hw, -hh)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    /// `None` for an unbounded test arena.
    pub room: Option<Room>,
    #[serde(default)]
    pub walls: Vec<Segment>,
}

impl Default for Arena {
    fn default() -> Self {
        Self { room: Some(Room { width: 400.0, height: 400.0 }), walls: Vec::new() }
    }
}

impl Arena {
    pub fn unbounded() -> Self {
        Self { room: None, walls: Vec::new() }
    }

    pub fn with_wall(mut self, wall: Segment) -> Self {
        self.walls.push(wall);
        self
    }

    /// Whether a disc of `radius` at `pose` lies inside the room.
    pub fn contains(&self, pose: &Pose, radius: f64) -> bool {
        match self.room {
            None => true,
            Some(room) => {
                let (hw, hh) = room.half();
                pose.x.abs() <= hw - radius && pose.y.abs() <= hh - radius
            }
        }
    }

    /// Distance from `origin` along `heading_deg` to the nearest wall.
    pub fn ray_cast(&self, origin: (f64, f64), heading_deg: f64) -> Option<f64> {
        let rad = heading_deg.to_radians();
        let dir = (rad.cos(), rad.sin());
        let room_walls = self.room.map(|r| r.walls());
        room_walls
            .iter()
            .flatten()
            .chain(self.walls.iter())
            .filter_map(|s| s.ray_hit(origin, dir))
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Step length in seconds.
    pub dt: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    pub robot_radius_cm: f64,
    /// Raw reading reported when no echo returns within range.
    pub max_range_cm: f64,
    pub sma_window: usize,
    /// Batch-mode limit for indefinite and wall-guarded actions.
    pub indefinite_timeout_s: f64,
    /// Subtract the moving average's lag at the current speed before
    /// comparing against a wall threshold.
    pub lag_compensation: bool,
    pub start: Pose,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            noise: NoiseModel::default(),
            seed: 0,
            robot_radius_cm: 10.0,
            max_range_cm: 400.0,
            sma_window: ultrasonic::DEFAULT_WINDOW,
            indefinite_timeout_s: 30.0,
            lag_compensation: true,
            start: Pose::default(),
        }
    }
}

impl SimConfig {
    pub fn noiseless() -> Self {
        Self { noise: NoiseModel::off(), ..Self::default() }
    }

    pub fn check(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise.spike_probability) {
            return bad("spike probability must lie in [0, 1]");
        }
        if !(self.noise.gaussian_sigma_cm >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        if self.sma_window == 0 {
            return bad("SMA window must be positive");
        }
        if !(self.robot_radius_cm >= 0.0) || !(self.max_range_cm > 0.0) {
            return bad("radius and max range must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub pose: Pose,
    pub raw_sensor: f64,
    pub filtered_sensor: f64,
    /// Index of the action being executed, `None` when idle.
    pub action: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    pub time: f64,
    pub filter: SmaFilter,
    pub raw_sensor: f64,
    pub filtered_sensor: f64,
    pub active_action: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("action {action} did not finish within {seconds} s")]
    Timeout { action: usize, seconds: f64 },
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("start pose lies outside the arena")]
    StartOutsideArena,
    #[error("action {action} cannot be simulated: {source}")]
    Calibration {
        action: usize,
        #[source]
        source: CalibrationError,
    },
}

/// Ray-casts the range sensor and returns the raw reading.
///
/// The true distance is mapped back through the inverse range model, so that
/// calibrating the result recovers the distance plus the drawn noise.
pub fn sense(pose: &Pose, arena: &Arena, range_model: &LinModel, config: &SimConfig, rng: &mut ChaCha8Rng) -> f64 {
    match arena.ray_cast((pose.x, pose.y), pose.heading) {
        Some(d) if d <= config.max_range_cm => {
            let noisy = d + config.noise.sample(rng);
            range_model.invert(noisy).max(0.0)
        }
        _ => config.max_range_cm,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Progress {
    Timed { full_steps: u64, remainder: f64, done: u64, remainder_done: bool },
    Open,
}

#[derive(Debug, Clone)]
struct Running {
    plan: ActuationPlan,
    index: usize,
    started: bool,
    elapsed: f64,
    speed: f64,
    progress: Progress,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tick {
    /// One physical step was simulated.
    Stepped(TraceEvent),
    /// Nothing left to run.
    Idle,
}

/// Outcome of a batch [`Simulator::run_plan`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_pose: Pose,
    pub final_state: RobotState,
    pub trace: Vec<TraceEvent>,
}

pub struct Simulator {
    arena: Arena,
    config: SimConfig,
    cal: CalibrationSet,
    state: RobotState,
    rng: ChaCha8Rng,
    running: Option<Running>,
}

impl Simulator {
    pub fn new(arena: Arena, config: SimConfig, cal: CalibrationSet) -> Result<Self, SimError> {
        config.check()?;
        if !arena.contains(&config.start, config.robot_radius_cm) {
            return Err(SimError::StartOutsideArena);
        }
        let mut sim = Self {
            state: RobotState {
                pose: Pose::new(config.start.x, config.start.y, config.start.heading),
                time: 0.0,
                filter: SmaFilter::new(config.sma_window),
                raw_sensor: 0.0,
                filtered_sensor: 0.0,
                active_action: None,
            },
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            arena,
            config,
            cal,
            running: None,
        };
        sim.take_reading();
        Ok(sim)
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn pose(&self) -> Pose {
        self.state.pose
    }

    pub fn arena(&self) -> &Arena {
        &self.arena
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn calibration(&self) -> &CalibrationSet {
        &self.cal
    }

    pub fn is_busy(&self) -> bool {
        self.running.is_some()
    }

    /// Restores the start pose, clock, filter and random stream.
    pub fn reset(&mut self) {
        let fresh = Self::new(self.arena.clone(), self.config, self.cal.clone()).expect("config already validated");
        *self = fresh;
    }

    /// Current trace snapshot without stepping.
    pub fn snapshot(&self) -> TraceEvent {
        TraceEvent {
            t: self.state.time,
            pose: self.state.pose,
            raw_sensor: self.state.raw_sensor,
            filtered_sensor: self.state.filtered_sensor,
            action: self.state.active_action,
        }
    }

    fn take_reading(&mut self) {
        let raw = sense(&self.state.pose, &self.arena, &self.cal.range_sensor, &self.config, &mut self.rng);
        let cm = ultrasonic::calibrate_reading(&self.cal.range_sensor, raw).expect("sense never returns a negative reading");
        self.state.raw_sensor = raw;
        self.state.filtered_sensor = self.state.filter.push(cm);
    }

    fn model_for(&self, movement: Movement) -> &PolyModel {
        match movement {
            Movement::Forward => &self.cal.forward,
            Movement::Backward => &self.cal.backward,
            Movement::LeftTurn => &self.cal.left,
            Movement::RightTurn => &self.cal.right,
        }
    }

    /// Plant response to an action's drive level: cm/s or deg/s.
    pub fn speed_of(&self, action: &MotorAction) -> Result<f64, CalibrationError> {
        match action.movement {
            Some(m) if action.pwm > 0 => calibration::pwm_to_speed(self.model_for(m), action.drive_level),
            _ => Ok(0.0),
        }
    }

    fn integrate(&mut self, movement: Option<Movement>, speed: f64, dt: f64) {
        let pose = &mut self.state.pose;
        match movement {
            None => {}
            Some(Movement::LeftTurn) => pose.heading = normalize_heading(pose.heading + speed * dt),
            Some(Movement::RightTurn) => pose.heading = normalize_heading(pose.heading - speed * dt),
            Some(m @ (Movement::Forward | Movement::Backward)) => {
                let dir = if m == Movement::Forward { pose.heading } else { pose.heading + 180.0 };
                let mut travel = speed * dt;
                if let Some(hit) = self.arena.ray_cast((pose.x, pose.y), dir) {
                    travel = travel.min((hit - self.config.robot_radius_cm).max(0.0));
                }
                let rad = dir.to_radians();
                pose.x += travel * rad.cos();
                pose.y += travel * rad.sin();
                if let Some(room) = self.arena.room {
                    let (hw, hh) = room.half();
                    let r = self.config.robot_radius_cm;
                    pose.x = pose.x.clamp(-hw + r, hw - r);
                    pose.y = pose.y.clamp(-hh + r, hh - r);
                }
            }
        }
    }

    /// Advances the world by `dt` under `action`, then samples the sensor.
    pub fn step(&mut self, action: &MotorAction, dt: f64) -> Result<TraceEvent, CalibrationError> {
        let speed = self.speed_of(action)?;
        self.advance(action.movement.filter(|_| action.pwm > 0), speed, dt);
        Ok(self.snapshot())
    }

    fn advance(&mut self, movement: Option<Movement>, speed: f64, dt: f64) {
        self.integrate(movement, speed, dt);
        self.state.time += dt;
        self.take_reading();
    }

    fn guard_satisfied(&self, threshold: f64, speed: f64) -> bool {
        let lag = if self.config.lag_compensation {
            // A window of n readings taken while closing at constant speed
            // reads (n - 1) / 2 steps behind the newest one.
            (self.state.filter.len().saturating_sub(1)) as f64 / 2.0 * speed * self.config.dt
        } else {
            0.0
        };
        self.state.filtered_sensor - lag <= threshold
    }

    /// Queues a plan for tick-by-tick execution, replacing any current one.
    pub fn start_plan(&mut self, plan: ActuationPlan) {
        self.running = Some(Running {
            plan,
            index: 0,
            started: false,
            elapsed: 0.0,
            speed: 0.0,
            progress: Progress::Open,
        });
    }

    /// Abandons the current plan; the motors stop immediately.
    pub fn halt(&mut self) {
        self.running = None;
        self.state.active_action = None;
    }

    /// Runs at most one physical step of the current plan.
    ///
    /// `timeout` bounds indefinite and guarded actions; `None` lets them run
    /// until [`Simulator::halt`].
    pub fn tick(&mut self, timeout: Option<f64>) -> Result<Tick, SimError> {
        loop {
            let Some(run) = self.running.as_ref() else {
                self.state.active_action = None;
                return Ok(Tick::Idle);
            };
            let index = run.index;
            let Some(action) = run.plan.actions.get(index).copied() else {
                self.halt();
                return Ok(Tick::Idle);
            };
            if !run.started {
                self.begin_action(index, &action)?;
            }
            self.state.active_action = Some(index);
            match self.next_step(index, &action, timeout)? {
                Some(dt) => {
                    let run = self.running.as_mut().expect("plan is running");
                    run.elapsed += dt;
                    let speed = run.speed;
                    self.advance(action.movement, speed, dt);
                    return Ok(Tick::Stepped(self.snapshot()));
                }
                None => {
                    let run = self.running.as_mut().expect("plan is running");
                    run.index += 1;
                    run.started = false;
                }
            }
        }
    }

    fn begin_action(&mut self, index: usize, action: &MotorAction) -> Result<(), SimError> {
        let speed = self
            .speed_of(action)
            .map_err(|source| SimError::Calibration { action: index, source })?;
        let progress = match action.duration {
            Some(d) if action.guard.is_none() => {
                let dt = self.config.dt;
                let mut full = (d / dt).floor();
                let mut rem = d - full * dt;
                if rem < 0.0 {
                    full -= 1.0;
                    rem += dt;
                }
                if rem <= 1e-12 * d.max(1.0) {
                    rem = 0.0;
                }
                Progress::Timed { full_steps: full.max(0.0) as u64, remainder: rem, done: 0, remainder_done: false }
            }
            _ => Progress::Open,
        };
        let run = self.running.as_mut().expect("plan is running");
        run.started = true;
        run.elapsed = 0.0;
        run.speed = speed;
        run.progress = progress;
        Ok(())
    }

    /// Length of the next step of the current action, `None` once it is done.
    fn next_step(&mut self, index: usize, action: &MotorAction, timeout: Option<f64>) -> Result<Option<f64>, SimError> {
        if action.is_stop() {
            return Ok(None);
        }
        let dt = self.config.dt;
        let run = self.running.as_ref().expect("plan is running");
        let (speed, elapsed) = (run.speed, run.elapsed);
        if matches!(run.progress, Progress::Open) {
            if let Some(g) = action.guard {
                if self.guard_satisfied(g.wall_threshold_cm, speed) {
                    return Ok(None);
                }
            }
            if let Some(limit) = timeout {
                if elapsed >= limit - 1e-9 {
                    self.halt();
                    return Err(SimError::Timeout { action: index, seconds: limit });
                }
            }
            return Ok(Some(dt));
        }
        let run = self.running.as_mut().expect("plan is running");
        let Progress::Timed { full_steps, remainder, done, remainder_done } = &mut run.progress else {
            unreachable!("open progress handled above")
        };
        Ok(if *done < *full_steps {
            *done += 1;
            Some(dt)
        } else if *remainder > 0.0 && !*remainder_done {
            *remainder_done = true;
            Some(*remainder)
        } else {
            None
        })
    }

    /// Executes `plan` to completion in batch mode.
    pub fn run_plan(&mut self, plan: &ActuationPlan) -> Result<RunSummary, SimError> {
        let timeout = Some(self.config.indefinite_timeout_s);
        self.start_plan(plan.clone());
        let mut trace = Vec::new();
        loop {
            match self.tick(timeout)? {
                Tick::Stepped(ev) => trace.push(ev),
                Tick::Idle => break,
            }
        }
        Ok(RunSummary { final_pose: self.state.pose, final_state: self.state.clone(), trace })
    }
}

/// Writes one JSON object per line.
pub fn write_trace_jsonl<W: Write>(events: &[TraceEvent], mut out: W) -> io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::command::parse_sequence;
    use crate::drivetrain::{compile, DriveDefaults};

    fn sim(arena: Arena) -> Simulator {
        Simulator::new(arena, SimConfig::noiseless(), CalibrationSet::default()).unwrap()
    }

    fn plan(text: &str) -> ActuationPlan {
        compile(&parse_sequence(text).unwrap(), &CalibrationSet::default(), &DriveDefaults::default()).unwrap()
    }

    #[test]
    fn forward_step_moves_point_three() {
        let mut s = sim(Arena::default());
        let a = plan("f,100").actions[0];
        let ev = s.step(&a, 0.01).unwrap();
        assert!((ev.pose.x - 0.3).abs() < 1e-9);
        assert_eq!(ev.pose.y, 0.0);
    }

    #[test]
    fn left_turn_for_one_second() {
        let mut s = sim(Arena::default());
        let a = plan("l,90").actions[0];
        for _ in 0..100 {
            s.step(&a, 0.01).unwrap();
        }
        assert!(heading_error(s.pose().heading, 90.0) < 1e-6);
    }

    #[test]
    fn stop_leaves_pose_alone() {
        let mut s = sim(Arena::default());
        let before = s.pose();
        s.step(&plan("s").actions[0], 0.01).unwrap();
        assert_eq!(s.pose(), before);
    }

    #[test]
    fn sense_inverts_the_range_model() {
        let arena = Arena::unbounded().with_wall(Segment::new((50.0, -100.0), (50.0, 100.0)));
        let cfg = SimConfig::noiseless();
        let model = LinModel::reference_range_sensor();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw = sense(&Pose::default(), &arena, &model, &cfg, &mut rng);
        assert!((raw - (50.0 - 1.0158) / 1.0759).abs() < 1e-12);
        assert!((raw - 45.528).abs() < 1e-3);
        assert!((ultrasonic::calibrate_reading(&model, raw).unwrap() - 50.0).abs() < 1e-9);

        let open = sense(&Pose::new(0.0, 0.0, 180.0), &arena, &model, &cfg, &mut rng);
        assert_eq!(open, 400.0);
    }

    #[test]
    fn seeded_noise_repeats() {
        let arena = Arena::default();
        let cfg = SimConfig::default();
        let model = LinModel::reference_range_sensor();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| sense(&Pose::default(), &arena, &model, &cfg, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn timed_motion_has_exact_duration() {
        let mut s = sim(Arena::default());
        let summary = s.run_plan(&plan("f,100")).unwrap();
        let last = summary.trace.last().unwrap();
        assert!((last.t - 100.0 / 30.0).abs() < 1e-9);
        assert!((summary.final_pose.x - 100.0).abs() < 1e-6);
        // 333 full steps plus the fractional remainder.
        assert_eq!(summary.trace.len(), 334);
    }

    #[test]
    fn indefinite_motion_times_out_in_batch() {
        let mut s = Simulator::new(
            Arena::unbounded(),
            SimConfig { indefinite_timeout_s: 1.0, ..SimConfig::noiseless() },
            CalibrationSet::default(),
        )
        .unwrap();
        let err = s.run_plan(&plan("f,10;f")).unwrap_err();
        assert_eq!(err, SimError::Timeout { action: 1, seconds: 1.0 });
        assert!(!s.is_busy());
    }

    #[test]
    fn collision_halts_at_contact() {
        let mut s = sim(Arena::default());
        s.run_plan(&plan("f,300")).unwrap();
        assert!((s.pose().x - 190.0).abs() < 1e-9);
        assert!(s.arena().contains(&s.pose(), 10.0));
    }

    #[test]
    fn halt_stops_indefinite_motion() {
        let mut s = sim(Arena::default());
        s.start_plan(plan("f"));
        for _ in 0..10 {
            s.tick(None).unwrap();
        }
        s.halt();
        let x = s.pose().x;
        assert_eq!(s.tick(None).unwrap(), Tick::Idle);
        assert_eq!(s.pose().x, x);
    }

    #[test]
    fn start_outside_room_is_rejected() {
        let cfg = SimConfig { start: Pose::new(500.0, 0.0, 0.0), ..SimConfig::noiseless() };
        assert!(matches!(
            Simulator::new(Arena::default(), cfg, CalibrationSet::default()),
            Err(SimError::StartOutsideArena)
        ));
        let cfg = SimConfig { dt: 0.0, ..SimConfig::noiseless() };
        assert!(matches!(Simulator::new(Arena::default(), cfg, CalibrationSet::default()), Err(SimError::Config(_))));
    }

    #[test]
    fn trace_jsonl_has_one_line_per_event() {
        let mut s = sim(Arena::default());
        let summary = s.run_plan(&plan("l,90")).unwrap();
        let mut buf = Vec::new();
        write_trace_jsonl(&summary.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), summary.trace.len());
        let first: TraceEvent = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, summary.trace[0]);
    }

    #[test]
    fn heading_helpers() {
        assert_eq!(normalize_heading(-90.0), 270.0);
        assert_eq!(normalize_heading(720.0), 0.0);
        assert!(normalize_heading(-1e-18) < 360.0);
        assert!((heading_error(359.95, 0.05) - 0.1).abs() < 1e-9);
    }
}
