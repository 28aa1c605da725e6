//! Motor driver logic and compilation of command sequences into timed plans.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{self, CalibrationError, CalibrationSet, PolyModel};
use crate::command::{Command, CommandSequence};

/// H-bridge input levels. IN1/IN2 drive one wheel pair, IN3/IN4 the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PinState {
    pub in1: u8,
    pub in2: u8,
    pub in3: u8,
    pub in4: u8,
}

impl PinState {
    pub const fn new(in1: u8, in2: u8, in3: u8, in4: u8) -> Self {
        Self { in1, in2, in3, in4 }
    }

    /// Direction pins are irrelevant once PWM is 0; this is what a stop carries.
    pub const RELEASED: PinState = PinState::new(0, 0, 0, 0);

    pub fn as_array(&self) -> [u8; 4] {
        [self.in1, self.in2, self.in3, self.in4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Movement {
    Forward,
    Backward,
    LeftTurn,
    RightTurn,
}

impl Movement {
    pub const ALL: [Movement; 4] =
        [Movement::Forward, Movement::Backward, Movement::RightTurn, Movement::LeftTurn];

    pub fn is_turn(self) -> bool {
        matches!(self, Movement::LeftTurn | Movement::RightTurn)
    }
}

pub fn pins_for(movement: Movement) -> PinState {
    match movement {
        Movement::Forward => PinState::new(1, 0, 1, 0),
        Movement::Backward => PinState::new(0, 1, 0, 1),
        Movement::RightTurn => PinState::new(0, 1, 1, 0),
        Movement::LeftTurn => PinState::new(1, 0, 0, 1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallGuard {
    pub wall_threshold_cm: f64,
}

/// One step of an actuation plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorAction {
    /// `None` for a stop.
    pub movement: Option<Movement>,
    pub pins: PinState,
    /// PWM count written to the driver.
    pub pwm: u8,
    /// The calibrated, unquantized drive level `pwm` was rounded from. The
    /// simulated plant responds to this value.
    pub drive_level: f64,
    /// Seconds; `None` runs until stopped or guarded out.
    pub duration: Option<f64>,
    pub guard: Option<WallGuard>,
    /// Index of the command this action came from.
    pub source: usize,
}

impl MotorAction {
    pub fn stop(source: usize) -> Self {
        Self {
            movement: None,
            pins: PinState::RELEASED,
            pwm: 0,
            drive_level: 0.0,
            duration: None,
            guard: None,
            source,
        }
    }

    pub fn is_stop(&self) -> bool {
        self.pwm == 0 || self.movement.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuationPlan {
    pub actions: Vec<MotorAction>,
}

impl ActuationPlan {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Sum of timed action durations, ignoring indefinite ones.
    pub fn timed_duration(&self) -> f64 {
        self.actions.iter().filter_map(|a| a.duration).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveDefaults {
    pub linear_speed: f64,
    pub angular_speed: f64,
    pub wall_threshold_cm: f64,
    pub max_action_seconds: f64,
}

impl Default for DriveDefaults {
    fn default() -> Self {
        Self {
            linear_speed: 30.0,
            angular_speed: 90.0,
            wall_threshold_cm: 20.0,
            max_action_seconds: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("command {index} ({command}) would run {seconds:.3} s, over the {limit} s limit")]
    DurationOverflow { index: usize, command: String, seconds: f64, limit: f64 },
    #[error("default speed is not usable with the {model} model: {source}")]
    Calibration {
        model: &'static str,
        #[source]
        source: CalibrationError,
    },
}

struct Drive {
    pwm: u8,
    level: f64,
}

fn drive(model: &PolyModel, name: &'static str, speed: f64) -> Result<Drive, CompileError> {
    let wrap = |source| CompileError::Calibration { model: name, source };
    let pwm = calibration::speed_to_pwm(model, speed).map_err(wrap)?;
    let level = calibration::speed_to_pwm_unrounded(model, speed).map_err(wrap)?;
    Ok(Drive { pwm, level })
}

/// Compiles a command sequence into an actuation plan.
///
/// One action per command, in order, except that consecutive stops fold into
/// a single stop action.
pub fn compile(
    seq: &CommandSequence,
    cal: &CalibrationSet,
    defaults: &DriveDefaults,
) -> Result<ActuationPlan, CompileError> {
    let mut actions: Vec<MotorAction> = Vec::with_capacity(seq.len());
    for (index, command) in seq.iter().enumerate() {
        let (movement, model, name, speed) = match command {
            Command::Stop => {
                if !actions.last().is_some_and(MotorAction::is_stop) {
                    actions.push(MotorAction::stop(index));
                }
                continue;
            }
            Command::Forward(_) | Command::ForwardUntilWall => {
                (Movement::Forward, &cal.forward, "forward", defaults.linear_speed)
            }
            Command::Backward(_) => (Movement::Backward, &cal.backward, "backward", defaults.linear_speed),
            Command::TurnLeft(_) => (Movement::LeftTurn, &cal.left, "left", defaults.angular_speed),
            Command::TurnRight(_) => (Movement::RightTurn, &cal.right, "right", defaults.angular_speed),
        };
        let d = drive(model, name, speed)?;
        let duration = match command.magnitude() {
            Some(m) => {
                let secs = calibration::duration_for_distance(m, speed)
                    .map_err(|source| CompileError::Calibration { model: name, source })?;
                if secs > defaults.max_action_seconds {
                    return Err(CompileError::DurationOverflow {
                        index,
                        command: command.to_string(),
                        seconds: secs,
                        limit: defaults.max_action_seconds,
                    });
                }
                Some(secs)
            }
            None => None,
        };
        let guard = matches!(command, Command::ForwardUntilWall)
            .then_some(WallGuard { wall_threshold_cm: defaults.wall_threshold_cm });
        actions.push(MotorAction {
            movement: Some(movement),
            pins: pins_for(movement),
            pwm: d.pwm,
            drive_level: d.level,
            duration,
            guard,
            source: index,
        });
    }
    Ok(ActuationPlan { actions })
}
