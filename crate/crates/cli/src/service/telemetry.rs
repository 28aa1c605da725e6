use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    PoseUpdate,
    SensorUpdate,
    TranslationPreview,
    Ack,
    Error,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::PoseUpdate => "pose_update",
            MessageKind::SensorUpdate => "sensor_update",
            MessageKind::TranslationPreview => "translation_preview",
            MessageKind::Ack => "ack",
            MessageKind::Error => "error",
        }
    }
}

/// Envelope pushed to every telemetry subscriber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceMessage {
    pub kind: MessageKind,
    pub payload: Value,
    /// Seconds since the service started; never decreases within a stream.
    pub timestamp: f64,
}

/// Broadcast hub. Stamping and sending happen under one lock so every
/// subscriber sees timestamps in order.
#[derive(Clone)]
pub struct Telemetry {
    start: Instant,
    last: Arc<Mutex<f64>>,
    tx: broadcast::Sender<ServiceMessage>,
}

impl Telemetry {
    pub fn new(capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(capacity);
        Self { start: Instant::now(), last: Arc::new(Mutex::new(0.0)), tx }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServiceMessage> {
        self.tx.subscribe()
    }

    pub fn emit(&self, kind: MessageKind, payload: Value) {
        let mut last = self.last.lock().expect("telemetry lock");
        let timestamp = self.start.elapsed().as_secs_f64().max(*last);
        *last = timestamp;
        // No subscribers is fine.
        let _ = self.tx.send(ServiceMessage { kind, payload, timestamp });
    }
}
