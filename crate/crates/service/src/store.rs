//! File-backed persistence: one append-only JSONL log per run, a run index, campaign
//! snapshots and the idempotency journal.
//!
//! ```text
//! <data_dir>/index.json            {"runs": [RunRecord, ...]}
//! <data_dir>/runs/<id>.jsonl       one EventEnvelope per line
//! <data_dir>/campaigns/<id>.json   CampaignResource
//! <data_dir>/idempotency.jsonl     one stored response per line
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::Utc;
use labrun_core::checker::CheckFinding;
use labrun_core::orchestrator::{Alert, RunInput};
use labrun_core::sim::{EventKind, ExecutionEvent, FaultInjection, RunStatus};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::envelope::{timestamp, EventEnvelope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: Uuid,
    pub status: RunStatus,
    pub env: String,
    pub input: RunInput,
    #[serde(default)]
    pub faults: Vec<FaultInjection>,
    /// Checked program currently loaded, canonical text.
    pub program: String,
    pub revision: u32,
    /// Next instruction to execute.
    pub pc: usize,
    #[serde(default)]
    pub findings: Vec<CheckFinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default)]
    pub alerts: Vec<Alert>,
    /// Envelopes written so far.
    pub events: u64,
    /// Log path relative to the data directory.
    pub log: String,
    pub created_at: String,
    pub updated_at: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexFile {
    runs: Vec<RunRecord>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Exclusive appender for one run's log.
#[derive(Debug)]
pub struct LogWriter {
    file: File,
}

impl LogWriter {
    pub fn append(&mut self, line: &str) -> io::Result<()> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.file.write_all(&buf)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    static NEXT: AtomicU64 = AtomicU64::new(0);
    let n = NEXT.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("{}.{n}.tmp", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    fs::rename(tmp, path)
}

fn invalid(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("runs"))?;
        fs::create_dir_all(root.join("campaigns"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_name(id: Uuid) -> String {
        format!("runs/{id}.jsonl")
    }

    pub fn log_path(&self, id: Uuid) -> PathBuf {
        self.root.join(Self::log_name(id))
    }

    pub fn read_index(&self) -> io::Result<Vec<RunRecord>> {
        let path = self.root.join("index.json");
        match fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice::<IndexFile>(&bytes)
                .map_err(invalid)?
                .runs),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }

    pub fn write_index<'a>(&self, runs: impl IntoIterator<Item = &'a RunRecord>) -> io::Result<()> {
        let file = IndexFile {
            runs: runs.into_iter().cloned().collect(),
        };
        let bytes = serde_json::to_vec_pretty(&file).map_err(invalid)?;
        write_atomic(&self.root.join("index.json"), &bytes)
    }

    pub fn create_log(&self, id: Uuid) -> io::Result<LogWriter> {
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(self.log_path(id))?;
        Ok(LogWriter { file })
    }

    pub fn append_log(&self, id: Uuid) -> io::Result<LogWriter> {
        let file = OpenOptions::new().append(true).open(self.log_path(id))?;
        Ok(LogWriter { file })
    }

    /// Complete lines of a run log. A torn final line from a crash is dropped.
    pub fn read_log(&self, id: Uuid) -> io::Result<Vec<String>> {
        let bytes = fs::read(self.log_path(id))?;
        let complete = match bytes.iter().rposition(|b| *b == b'\n') {
            Some(end) => &bytes[..=end],
            None => &[][..],
        };
        if complete.len() < bytes.len() {
            let f = OpenOptions::new().write(true).open(self.log_path(id))?;
            f.set_len(complete.len() as u64)?;
        }
        BufReader::new(complete).lines().collect()
    }

    /// Loads the index, marks every in-flight run interrupted and appends a terminal
    /// envelope to its log. Returns the records with their log lines.
    pub fn recover(&self) -> io::Result<Vec<(RunRecord, Vec<String>)>> {
        let mut out = Vec::new();
        for mut record in self.read_index()? {
            let mut lines = self.read_log(record.id).unwrap_or_default();
            if !record.status.is_terminal() {
                let last: Option<EventEnvelope> =
                    lines.last().and_then(|l| serde_json::from_str(l).ok());
                let clock = last
                    .as_ref()
                    .and_then(EventEnvelope::event)
                    .map_or(0.0, |e| e.clock);
                let event = ExecutionEvent {
                    seq: lines.len() as u64,
                    revision: record.revision,
                    index: None,
                    clock,
                    kind: EventKind::RunFinished {
                        status: RunStatus::Interrupted,
                    },
                };
                let now = Utc::now();
                let line = EventEnvelope::new(event.seq, record.id, &event, now).to_line();
                self.append_log(record.id)
                    .or_else(|_| self.create_log(record.id))?
                    .append(&line)?;
                lines.push(line);
                record.status = RunStatus::Interrupted;
                record.updated_at = timestamp(now);
            }
            record.events = lines.len() as u64;
            out.push((record, lines));
        }
        self.write_index(out.iter().map(|(r, _)| r))?;
        Ok(out)
    }

    pub fn write_campaign<T: Serialize>(&self, id: Uuid, campaign: &T) -> io::Result<()> {
        let bytes = serde_json::to_vec_pretty(campaign).map_err(invalid)?;
        write_atomic(&self.root.join(format!("campaigns/{id}.json")), &bytes)
    }

    pub fn read_campaigns<T: DeserializeOwned>(&self) -> io::Result<Vec<T>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(self.root.join("campaigns"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|p| serde_json::from_slice(&fs::read(p)?).map_err(invalid))
            .collect()
    }

    pub fn journal_path(&self) -> PathBuf {
        self.root.join("idempotency.jsonl")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: Uuid, status: RunStatus) -> RunRecord {
        RunRecord {
            id,
            status,
            env: "default".into(),
            input: RunInput::Program(String::new()),
            faults: vec![],
            program: String::new(),
            revision: 0,
            pc: 0,
            findings: vec![],
            transcript: None,
            alerts: vec![],
            events: 0,
            log: Store::log_name(id),
            created_at: String::new(),
            updated_at: String::new(),
        }
    }

    #[test]
    fn recovery_interrupts_in_flight_runs_only() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let live = Uuid::new_v4();
        let done = Uuid::new_v4();
        for id in [live, done] {
            store
                .create_log(id)
                .unwrap()
                .append(r#"{"seq":0}"#)
                .unwrap();
        }
        store
            .write_index(&[
                record(live, RunStatus::Running),
                record(done, RunStatus::Completed),
            ])
            .unwrap();
        let recovered = store.recover().unwrap();
        assert_eq!(recovered[0].0.status, RunStatus::Interrupted);
        assert_eq!(recovered[0].1.len(), 2);
        assert_eq!(recovered[1].0.status, RunStatus::Completed);
        assert_eq!(recovered[1].1.len(), 1);
        assert_eq!(store.read_log(live).unwrap(), recovered[0].1);
        let index = store.read_index().unwrap();
        assert_eq!(index[0].status, RunStatus::Interrupted);
        let again = store.recover().unwrap();
        assert_eq!(again[0].1.len(), 2);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = Uuid::new_v4();
        std::fs::write(store.log_path(id), "{\"a\":1}\n{\"b\"").unwrap();
        assert_eq!(store.read_log(id).unwrap(), vec!["{\"a\":1}".to_string()]);
        assert_eq!(
            std::fs::read_to_string(store.log_path(id)).unwrap(),
            "{\"a\":1}\n"
        );
    }
}
