//! Emulated relay chain between the controller and the robot.
//!
//! The controller writes newline-terminated frames to a stream socket; the
//! access point forwards each complete frame unchanged over a 9600-baud
//! serial line; the driver on the far end reassembles lines, executes them
//! one at a time and answers `ok` or `err:<code>`.

mod driver;
mod frame;
mod relay;
mod serial;
mod tcp;

pub use driver::{driver_loop, Driver, ErrorCode, ExecError, Executor, FrameHandler, PlanSpan, Reply, SimExecutor};
pub use frame::{Frame, FrameDecoder, FrameError, MAX_PAYLOAD, TERMINATOR};
pub use relay::{AccessPoint, LoopbackBridge, Relayed};
pub use serial::{serial_channel, SerialChunk, SerialConfig, SerialRx, SerialTx, BITS_PER_BYTE};
pub use tcp::{TcpBridge, TcpClient};
