use log::warn;

use super::driver::{ErrorCode, FrameHandler, Reply};
use super::frame::{Frame, FrameDecoder, FrameError, TERMINATOR};
use super::serial::{serial_channel, SerialChunk, SerialConfig, SerialRx, SerialTx};

/// What the access point did with one complete line from the controller.
#[derive(Debug, Clone, PartialEq)]
pub enum Relayed {
    /// Forwarded byte-for-byte; the last byte reached the driver at this
    /// simulated time.
    Forwarded { arrived_at: f64 },
    /// Not forwarded; the reply goes straight back to the controller.
    Rejected(Reply),
}

/// Receiver/transmitter between the controller socket and the serial line.
///
/// Complete lines are forwarded untouched, terminator included. Bytes of a
/// line that never completes are held back and dropped on disconnect, so
/// the driver never sees half a frame.
pub struct AccessPoint {
    decoder: FrameDecoder,
    serial: SerialTx,
}

impl AccessPoint {
    pub fn new(serial: SerialTx) -> Self {
        Self { decoder: FrameDecoder::new(), serial }
    }

    /// Feeds bytes read from the controller. `now` is the simulated time
    /// they arrived.
    pub fn ingest(&mut self, bytes: &[u8], now: f64) -> Vec<Relayed> {
        let mut out = Vec::new();
        for line in self.decoder.push(bytes) {
            match line {
                Ok(mut payload) => {
                    payload.push(TERMINATOR);
                    match self.serial.write(&payload, now) {
                        Some(arrived_at) => out.push(Relayed::Forwarded { arrived_at }),
                        None => {
                            warn!("serial receiver closed; frame dropped");
                            out.push(Relayed::Rejected(Reply::Err(ErrorCode::Exec)));
                        }
                    }
                }
                Err(FrameError::Oversize(n)) => {
                    warn!("rejecting {n}-byte oversize frame from controller");
                    out.push(Relayed::Rejected(Reply::Err(ErrorCode::Oversize)));
                }
                Err(e) => {
                    warn!("rejecting frame: {e}");
                    out.push(Relayed::Rejected(Reply::Err(ErrorCode::Parse)));
                }
            }
        }
        out
    }

    /// Controller went away; drops any unfinished line.
    pub fn disconnect(&mut self) -> usize {
        let dropped = self.decoder.discard_partial();
        if dropped > 0 {
            warn!("controller disconnected mid-frame; discarded {dropped} bytes");
        }
        dropped
    }

    pub fn serial(&self) -> &SerialTx {
        &self.serial
    }
}

/// Controller, access point, serial line and driver wired together on one
/// thread. Every call runs the driver until the line is drained.
pub struct LoopbackBridge<H> {
    ap: AccessPoint,
    rx: SerialRx,
    decoder: FrameDecoder,
    handler: H,
    delivered: Vec<SerialChunk>,
    keep_delivered: bool,
}

impl<H: FrameHandler> LoopbackBridge<H> {
    pub fn new(handler: H, serial: SerialConfig) -> Self {
        let (tx, rx) = serial_channel(serial);
        Self {
            ap: AccessPoint::new(tx),
            rx,
            decoder: FrameDecoder::new(),
            handler,
            delivered: Vec::new(),
            keep_delivered: false,
        }
    }

    /// Keep a copy of every chunk the driver side received.
    pub fn record_delivery(mut self) -> Self {
        self.keep_delivered = true;
        self
    }

    pub fn handler(&self) -> &H {
        &self.handler
    }

    pub fn handler_mut(&mut self) -> &mut H {
        &mut self.handler
    }

    pub fn into_handler(self) -> H {
        self.handler
    }

    pub fn delivered(&self) -> &[SerialChunk] {
        &self.delivered
    }

    /// Simulated time at which the serial line goes idle.
    pub fn serial_clock(&self) -> f64 {
        self.ap.serial().clock()
    }

    /// Sends raw controller bytes; returns the replies they produced, in order.
    pub fn send_bytes(&mut self, bytes: &[u8], now: f64) -> Vec<Reply> {
        let mut replies = Vec::new();
        for relayed in self.ap.ingest(bytes, now) {
            match relayed {
                Relayed::Rejected(r) => replies.push(r),
                Relayed::Forwarded { .. } => {
                    while let Some(chunk) = self.rx.try_recv() {
                        for frame in self.decoder.push(&chunk.bytes) {
                            replies.push(match frame {
                                Ok(payload) => self.handler.handle(&payload),
                                Err(_) => Reply::Err(ErrorCode::Oversize),
                            });
                        }
                        if self.keep_delivered {
                            self.delivered.push(chunk);
                        }
                    }
                }
            }
        }
        replies
    }

    pub fn send(&mut self, frame: &Frame) -> Reply {
        let now = self.serial_clock();
        let mut replies = self.send_bytes(&frame.encode(), now);
        debug_assert_eq!(replies.len(), 1);
        replies.pop().expect("one frame yields one reply")
    }

    pub fn disconnect(&mut self) -> usize {
        self.ap.disconnect()
    }
}
