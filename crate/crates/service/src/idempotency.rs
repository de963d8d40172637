//! Replay cache for mutating requests carrying an `Idempotency-Key` header.
//!
//! The first request with a key runs; concurrent and later retries with the same key wait
//! for it and receive the stored status and body. Server errors are not stored.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const HEADER: &str = "idempotency-key";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub key: String,
    pub status: u16,
    pub body: Value,
}

type Slot = Arc<tokio::sync::Mutex<Option<StoredResponse>>>;

pub struct IdempotencyCache {
    slots: Mutex<HashMap<String, Slot>>,
    journal: Option<PathBuf>,
}

impl IdempotencyCache {
    pub fn in_memory() -> Self {
        Self {
            slots: Mutex::new(HashMap::new()),
            journal: None,
        }
    }

    /// Reloads stored responses from `journal` and appends new ones to it.
    pub fn with_journal(journal: PathBuf) -> std::io::Result<Self> {
        let mut slots = HashMap::new();
        if let Ok(f) = std::fs::File::open(&journal) {
            for line in BufReader::new(f).lines() {
                let line = line?;
                if let Ok(r) = serde_json::from_str::<StoredResponse>(&line) {
                    slots.insert(r.key.clone(), Arc::new(tokio::sync::Mutex::new(Some(r))));
                }
            }
        }
        Ok(Self {
            slots: Mutex::new(slots),
            journal: Some(journal),
        })
    }

    /// Runs `f` once per `key`; every caller gets the same `(status, body)`.
    pub async fn run<F, Fut>(&self, key: String, f: F) -> (u16, Value)
    where
        F: FnOnce() -> Fut,
        Fut: std::future::Future<Output = (u16, Value)>,
    {
        let slot = self
            .slots
            .lock()
            .expect("idempotency lock")
            .entry(key.clone())
            .or_default()
            .clone();
        let mut guard = slot.lock().await;
        if let Some(stored) = guard.as_ref() {
            return (stored.status, stored.body.clone());
        }
        let (status, body) = f().await;
        if status < 500 {
            let stored = StoredResponse {
                key,
                status,
                body: body.clone(),
            };
            if let Some(path) = &self.journal {
                let line = serde_json::to_string(&stored).expect("stored response serializes");
                let written = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .and_then(|mut f| f.write_all(format!("{line}\n").as_bytes()));
                if let Err(e) = written {
                    tracing::error!("idempotency journal write failed: {e}");
                }
            }
            *guard = Some(stored);
        }
        (status, body)
    }
}
