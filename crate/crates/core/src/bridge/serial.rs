use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Bits on the wire per byte with 8N1 framing.
pub const BITS_PER_BYTE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SerialConfig {
    pub baud: u32,
    /// Limit simulated throughput to `baud / 10` bytes per second.
    pub pacing: bool,
}

impl Default for SerialConfig {
    fn default() -> Self {
        Self { baud: 9600, pacing: true }
    }
}

impl SerialConfig {
    /// Simulated seconds one byte occupies the line.
    pub fn byte_time(&self) -> f64 {
        BITS_PER_BYTE / f64::from(self.baud)
    }
}

/// Bytes plus the simulated time at which the last of them arrived.
#[derive(Debug, Clone, PartialEq)]
pub struct SerialChunk {
    pub bytes: Vec<u8>,
    pub arrived_at: f64,
}

/// Transmit end of an emulated UART. Bytes are delivered in order; with
/// pacing on, each occupies the line for one byte time of simulated time.
#[derive(Debug)]
pub struct SerialTx {
    config: SerialConfig,
    line_free_at: f64,
    bytes_sent: u64,
    tx: Sender<SerialChunk>,
}

#[derive(Debug)]
pub struct SerialRx {
    rx: Receiver<SerialChunk>,
}

pub fn serial_channel(config: SerialConfig) -> (SerialTx, SerialRx) {
    let (tx, rx) = mpsc::channel();
    (SerialTx { config, line_free_at: 0.0, bytes_sent: 0, tx }, SerialRx { rx })
}

impl SerialTx {
    pub fn config(&self) -> SerialConfig {
        self.config
    }

    /// Queues `bytes` for transmission starting no earlier than `now`
    /// (simulated seconds). Returns the simulated arrival time of the last
    /// byte, or `None` if the receiver is gone.
    pub fn write(&mut self, bytes: &[u8], now: f64) -> Option<f64> {
        let start = self.line_free_at.max(now);
        let arrived_at = if self.config.pacing {
            start + bytes.len() as f64 * self.config.byte_time()
        } else {
            start
        };
        self.line_free_at = arrived_at;
        self.bytes_sent += bytes.len() as u64;
        self.tx.send(SerialChunk { bytes: bytes.to_vec(), arrived_at }).ok()?;
        Some(arrived_at)
    }

    /// Simulated time at which the line next becomes idle.
    pub fn clock(&self) -> f64 {
        self.line_free_at
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }
}

impl SerialRx {
    /// Blocks for the next chunk; `None` once the sender is dropped.
    pub fn recv(&self) -> Option<SerialChunk> {
        self.rx.recv().ok()
    }

    pub fn try_recv(&self) -> Option<SerialChunk> {
        self.rx.try_recv().ok()
    }

    /// `Err(true)` on timeout, `Err(false)` when disconnected.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<SerialChunk, bool> {
        self.rx.recv_timeout(timeout).map_err(|e| matches!(e, RecvTimeoutError::Timeout))
    }
}
