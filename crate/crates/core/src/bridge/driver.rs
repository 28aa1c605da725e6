use std::fmt;
use std::sync::mpsc::Sender;

use log::{debug, warn};
use thiserror::Error;

use super::frame::{FrameDecoder, FrameError};
use super::serial::SerialRx;
use crate::calibration::CalibrationSet;
use crate::command::parse_sequence;
use crate::drivetrain::{compile, ActuationPlan, DriveDefaults};
use crate::simulator::{SimError, Simulator, TraceEvent};

/// Newline-terminated acknowledgement sent back to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reply {
    Ok,
    Err(ErrorCode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    /// The frame is not a valid command sequence.
    Parse,
    /// A plan did not finish within the executor's time limit.
    Timeout,
    /// The frame exceeded the payload limit.
    Oversize,
    /// The sequence parsed but could not be compiled into a plan.
    Plan,
    /// The executor failed for another reason.
    Exec,
    /// Another controller is already connected.
    Busy,
}

impl ErrorCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCode::Parse => "parse",
            ErrorCode::Timeout => "timeout",
            ErrorCode::Oversize => "oversize",
            ErrorCode::Plan => "plan",
            ErrorCode::Exec => "exec",
            ErrorCode::Busy => "busy",
        }
    }

    fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "parse" => ErrorCode::Parse,
            "timeout" => ErrorCode::Timeout,
            "oversize" => ErrorCode::Oversize,
            "plan" => ErrorCode::Plan,
            "exec" => ErrorCode::Exec,
            "busy" => ErrorCode::Busy,
            _ => return None,
        })
    }
}

impl fmt::Display for Reply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reply::Ok => f.write_str("ok"),
            Reply::Err(code) => write!(f, "err:{}", code.as_str()),
        }
    }
}

impl Reply {
    pub fn encode(&self) -> Vec<u8> {
        format!("{self}\n").into_bytes()
    }

    /// Parses one reply line, with or without its terminator.
    pub fn decode(line: &str) -> Option<Reply> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        if line == "ok" {
            return Some(Reply::Ok);
        }
        line.strip_prefix("err:").and_then(ErrorCode::from_str).map(Reply::Err)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("execution timed out")]
    Timeout,
    #[error("execution failed: {0}")]
    Failed(String),
}

/// Something that carries out actuation plans, one at a time.
pub trait Executor {
    /// Runs `plan` to completion before returning.
    fn execute(&mut self, plan: &ActuationPlan) -> Result<(), ExecError>;
}

/// Consumer of reassembled frames on the driver side of the serial link.
pub trait FrameHandler {
    fn handle(&mut self, payload: &[u8]) -> Reply;
}

/// The on-robot driver: validate, compile, execute, acknowledge.
pub struct Driver<E> {
    executor: E,
    calibration: CalibrationSet,
    defaults: DriveDefaults,
}

impl<E: Executor> Driver<E> {
    pub fn new(executor: E, calibration: CalibrationSet, defaults: DriveDefaults) -> Self {
        Self { executor, calibration, defaults }
    }

    pub fn executor(&self) -> &E {
        &self.executor
    }

    pub fn executor_mut(&mut self) -> &mut E {
        &mut self.executor
    }

    pub fn into_executor(self) -> E {
        self.executor
    }
}

impl<E: Executor> FrameHandler for Driver<E> {
    fn handle(&mut self, payload: &[u8]) -> Reply {
        let Ok(text) = std::str::from_utf8(payload) else {
            return Reply::Err(ErrorCode::Parse);
        };
        let seq = match parse_sequence(text) {
            Ok(seq) => seq,
            Err(diag) => {
                debug!("rejecting frame {text:?}: {diag}");
                return Reply::Err(ErrorCode::Parse);
            }
        };
        let plan = match compile(&seq, &self.calibration, &self.defaults) {
            Ok(plan) => plan,
            Err(e) => {
                warn!("cannot compile {text:?}: {e}");
                return Reply::Err(ErrorCode::Plan);
            }
        };
        match self.executor.execute(&plan) {
            Ok(()) => Reply::Ok,
            Err(ExecError::Timeout) => Reply::Err(ErrorCode::Timeout),
            Err(ExecError::Failed(msg)) => {
                warn!("executor failed on {text:?}: {msg}");
                Reply::Err(ErrorCode::Exec)
            }
        }
    }
}

/// Reads the serial link until it closes, handling one frame at a time and
/// sending one reply per frame, in frame order.
///
/// Returns the number of frames handled.
pub fn driver_loop<H: FrameHandler>(rx: &SerialRx, handler: &mut H, replies: &Sender<Reply>) -> usize {
    let mut decoder = FrameDecoder::new();
    let mut handled = 0;
    while let Some(chunk) = rx.recv() {
        for frame in decoder.push(&chunk.bytes) {
            let reply = match frame {
                Ok(payload) => handler.handle(&payload),
                Err(FrameError::Oversize(n)) => {
                    warn!("dropping {n}-byte oversize frame");
                    Reply::Err(ErrorCode::Oversize)
                }
                Err(e) => {
                    warn!("dropping frame: {e}");
                    Reply::Err(ErrorCode::Parse)
                }
            };
            handled += 1;
            if replies.send(reply).is_err() {
                return handled;
            }
        }
    }
    let partial = decoder.discard_partial();
    if partial > 0 {
        warn!("serial link closed with {partial} bytes of an unfinished frame; discarded");
    }
    handled
}

/// Start and end simulated times of one executed plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSpan {
    pub start: f64,
    pub end: f64,
}

/// Executes plans on a simulator in batch mode and keeps the full trace.
pub struct SimExecutor {
    sim: Simulator,
    trace: Vec<TraceEvent>,
    spans: Vec<PlanSpan>,
}

impl SimExecutor {
    pub fn new(sim: Simulator) -> Self {
        Self { sim, trace: Vec::new(), spans: Vec::new() }
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn spans(&self) -> &[PlanSpan] {
        &self.spans
    }
}

impl Executor for SimExecutor {
    fn execute(&mut self, plan: &ActuationPlan) -> Result<(), ExecError> {
        let start = self.sim.state().time;
        match self.sim.run_plan(plan) {
            Ok(summary) => {
                self.trace.extend(summary.trace);
                self.spans.push(PlanSpan { start, end: self.sim.state().time });
                Ok(())
            }
            Err(SimError::Timeout { .. }) => Err(ExecError::Timeout),
            Err(e) => Err(ExecError::Failed(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_wire_format() {
        assert_eq!(Reply::Ok.encode(), b"ok\n");
        assert_eq!(Reply::Err(ErrorCode::Parse).encode(), b"err:parse\n");
        assert_eq!(Reply::Err(ErrorCode::Timeout).encode(), b"err:timeout\n");
        for code in [
            ErrorCode::Parse,
            ErrorCode::Timeout,
            ErrorCode::Oversize,
            ErrorCode::Plan,
            ErrorCode::Exec,
            ErrorCode::Busy,
        ] {
            let r = Reply::Err(code);
            assert_eq!(Reply::decode(&r.to_string()), Some(r));
        }
        assert_eq!(Reply::decode("ok\n"), Some(Reply::Ok));
        assert_eq!(Reply::decode("err:nope"), None);
    }
}
