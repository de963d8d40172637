use chrono::{DateTime, SecondsFormat, Utc};
use labrun_core::sim::ExecutionEvent;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

/// One line of a run's event log and one WebSocket message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub seq: u64,
    pub run_id: Uuid,
    pub kind: String,
    pub payload: Value,
    pub timestamp: String,
}

pub fn timestamp(at: DateTime<Utc>) -> String {
    at.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl EventEnvelope {
    pub fn new(seq: u64, run_id: Uuid, event: &ExecutionEvent, at: DateTime<Utc>) -> Self {
        Self {
            seq,
            run_id,
            kind: event.kind.name().to_string(),
            payload: serde_json::to_value(event).expect("events serialize"),
            timestamp: timestamp(at),
        }
    }

    /// Serialized form without the trailing newline. Logged and streamed verbatim.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("envelopes serialize")
    }

    pub fn event(&self) -> Option<ExecutionEvent> {
        serde_json::from_value(self.payload.clone()).ok()
    }
}
