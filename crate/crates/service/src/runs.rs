//! Run registry and the per-run actor thread.
//!
//! Each live run is owned by one thread that steps the session, appends envelopes to the
//! run's log and fans them out. Operator commands arrive on a queue and are applied
//! between micro-phases, in arrival order.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::Utc;
use indexmap::IndexMap;
use labrun_core::checker::CheckedProgram;
use labrun_core::ir::render_program;
use labrun_core::orchestrator::{Resolution, RunSession};
use labrun_core::sim::RunStatus;
use tokio::sync::{broadcast, mpsc, oneshot};
use uuid::Uuid;

use crate::envelope::{timestamp, EventEnvelope};
use crate::error::ApiError;
use crate::store::{LogWriter, RunRecord, Store};

/// Shared run index, persisted on every status or alert change.
pub struct Registry {
    store: Store,
    records: Mutex<IndexMap<Uuid, RunRecord>>,
}

impl Registry {
    pub fn new(store: Store, records: impl IntoIterator<Item = RunRecord>) -> Self {
        Self {
            store,
            records: Mutex::new(records.into_iter().map(|r| (r.id, r)).collect()),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn get(&self, id: Uuid) -> Option<RunRecord> {
        self.records.lock().expect("index lock").get(&id).cloned()
    }

    pub fn list(&self) -> Vec<RunRecord> {
        self.records
            .lock()
            .expect("index lock")
            .values()
            .cloned()
            .collect()
    }

    pub fn put(&self, record: RunRecord, persist: bool) {
        let mut records = self.records.lock().expect("index lock");
        records.insert(record.id, record);
        if persist {
            if let Err(e) = self.store.write_index(records.values()) {
                tracing::error!("index write failed: {e}");
            }
        }
    }
}

/// Log lines of one run plus the live fan-out. Envelope `seq` equals line position.
pub struct RunFeed {
    inner: Mutex<Feed>,
}

struct Feed {
    lines: Vec<Arc<str>>,
    tx: Option<broadcast::Sender<Arc<str>>>,
}

/// What a subscriber gets: the stored suffix and, for live runs, the continuation.
pub struct Subscription {
    pub backlog: Vec<Arc<str>>,
    /// Sequence number of the first live message.
    pub next: u64,
    pub live: Option<broadcast::Receiver<Arc<str>>>,
}

impl RunFeed {
    pub fn closed(lines: Vec<String>) -> Self {
        Self {
            inner: Mutex::new(Feed {
                lines: lines.into_iter().map(Arc::from).collect(),
                tx: None,
            }),
        }
    }

    pub fn live(buffer: usize) -> Self {
        let (tx, _) = broadcast::channel(buffer);
        Self {
            inner: Mutex::new(Feed {
                lines: Vec::new(),
                tx: Some(tx),
            }),
        }
    }

    pub fn len(&self) -> u64 {
        self.inner.lock().expect("feed lock").lines.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subscribe(&self, from: u64) -> Subscription {
        let feed = self.inner.lock().expect("feed lock");
        let start = (from as usize).min(feed.lines.len());
        Subscription {
            backlog: feed.lines[start..].to_vec(),
            next: feed.lines.len() as u64,
            live: feed.tx.as_ref().map(broadcast::Sender::subscribe),
        }
    }

    fn publish(&self, line: Arc<str>) {
        let mut feed = self.inner.lock().expect("feed lock");
        feed.lines.push(line.clone());
        if let Some(tx) = &feed.tx {
            let _ = tx.send(line);
        }
    }

    fn close(&self) {
        self.inner.lock().expect("feed lock").tx = None;
    }
}

pub type Reply = oneshot::Sender<Result<RunRecord, ApiError>>;

pub enum Command {
    Stop(Reply),
    /// Checks a candidate replacement against the run's current world.
    Check {
        program: String,
        reply: oneshot::Sender<Result<CheckedProgram, ApiError>>,
    },
    Resolve {
        alert: u32,
        resolution: Resolution,
        reply: Reply,
    },
}

struct Actor {
    session: RunSession,
    record: RunRecord,
    writer: LogWriter,
    feed: Arc<RunFeed>,
    registry: Arc<Registry>,
    published: usize,
}

impl Actor {
    fn publish(&mut self) {
        let now = Utc::now();
        let events = self.session.events();
        for (pos, e) in events.iter().enumerate().skip(self.published) {
            let line = EventEnvelope::new(pos as u64, self.record.id, e, now).to_line();
            if let Err(err) = self.writer.append(&line) {
                tracing::error!("run {} log write failed: {err}", self.record.id);
            }
            self.feed.publish(Arc::from(line));
        }
        self.published = events.len();

        let ex = self.session.executor();
        let mut next = self.record.clone();
        next.status = self.session.status();
        next.pc = ex.pc();
        next.events = self.published as u64;
        next.alerts = self.session.alerts().to_vec();
        if ex.revision() != next.revision {
            next.revision = ex.revision();
            next.program = render_program(ex.program());
            next.findings = self.session.checked().findings.clone();
        }
        let persist = next.status != self.record.status
            || next.alerts != self.record.alerts
            || next.revision != self.record.revision;
        next.updated_at = timestamp(now);
        self.record = next.clone();
        self.registry.put(next, persist);
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Stop(reply) => {
                let out = self.session.emergency_stop().map_err(ApiError::from);
                self.publish();
                let _ = reply.send(out.map(|_| self.record.clone()));
            }
            Command::Check { program, reply } => {
                let status = self.session.status();
                let out = if status.is_terminal() {
                    Err(ApiError::conflict(
                        "already_terminal",
                        format!("run is {status}"),
                    ))
                } else {
                    self.session
                        .check_replacement(&program)
                        .map_err(ApiError::from)
                };
                let _ = reply.send(out);
            }
            Command::Resolve {
                alert,
                resolution,
                reply,
            } => {
                let out = self
                    .session
                    .resolve_alert(alert, &resolution)
                    .map_err(ApiError::from);
                self.publish();
                let _ = reply.send(out.map(|_| self.record.clone()));
            }
        }
    }
}

/// Starts the actor thread for a freshly checked session and returns its command queue.
pub fn spawn_run(
    session: RunSession,
    record: RunRecord,
    writer: LogWriter,
    feed: Arc<RunFeed>,
    registry: Arc<Registry>,
    step_delay: Duration,
) -> mpsc::UnboundedSender<Command> {
    let (tx, mut rx) = mpsc::unbounded_channel::<Command>();
    let mut actor = Actor {
        session,
        record,
        writer,
        feed,
        registry,
        published: 0,
    };
    std::thread::Builder::new()
        .name(format!("run-{}", actor.record.id))
        .spawn(move || {
            actor.publish();
            loop {
                while let Ok(cmd) = rx.try_recv() {
                    actor.handle(cmd);
                }
                let status = actor.session.status();
                if status.is_terminal() {
                    break;
                }
                if status == RunStatus::Running {
                    actor.session.step();
                    actor.publish();
                    if !step_delay.is_zero() {
                        std::thread::sleep(step_delay);
                    }
                } else {
                    match rx.blocking_recv() {
                        Some(cmd) => actor.handle(cmd),
                        None => break,
                    }
                }
            }
            actor.feed.close();
        })
        .expect("spawn run thread");
    tx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subscription_splits_backlog_and_live_without_gaps() {
        let feed = RunFeed::live(4);
        feed.publish("a".into());
        feed.publish("b".into());
        let mut sub = feed.subscribe(1);
        assert_eq!(sub.backlog, vec![Arc::<str>::from("b")]);
        assert_eq!(sub.next, 2);
        feed.publish("c".into());
        assert_eq!(&*sub.live.as_mut().unwrap().try_recv().unwrap(), "c");
        feed.close();
        assert!(feed.subscribe(0).live.is_none());
        assert_eq!(feed.subscribe(9).backlog.len(), 0);
    }

    #[test]
    fn slow_subscriber_lags() {
        let feed = RunFeed::live(2);
        let mut sub = feed.subscribe(0);
        for l in ["a", "b", "c", "d"] {
            feed.publish(l.into());
        }
        assert!(matches!(
            sub.live.as_mut().unwrap().try_recv(),
            Err(broadcast::error::TryRecvError::Lagged(2))
        ));
    }
}
