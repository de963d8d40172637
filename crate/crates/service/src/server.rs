//! HTTP + WebSocket surface.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/health` | liveness and counts |
//! | GET | `/envs` | registered env ids |
//! | GET | `/bench`, `/rubric` | benchmark queries and scoring levels |
//! | POST | `/check` | parse + check only; with `run`, against that run's current world |
//! | POST, GET | `/runs` | start a run, list runs |
//! | GET | `/runs/{id}` | run resource |
//! | POST | `/runs/{id}/stop` | emergency stop |
//! | POST | `/runs/{id}/alerts/{aid}/resolve` | resume, abort or replace_program |
//! | GET (ws) | `/runs/{id}/events?from=N` | envelopes from `N`, then live |
//! | POST, GET | `/campaigns` | launch, list |
//! | GET | `/campaigns/{id}` | campaign with partial history |
//!
//! POST routes honour the `Idempotency-Key` header.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use indexmap::IndexMap;
use labrun_core::checker::{check_program, CheckedProgram};
use labrun_core::detector::Detector;
use labrun_core::env::EnvConfig;
use labrun_core::ir::render_program;
use labrun_core::orchestrator::{
    generate_benchmark, parse_protocol, rubric, FileProvider, FixtureProvider, ProviderError,
    Resolution, RunInput, RunSession, WorkflowProvider,
};
use labrun_core::sim::FaultInjection;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc, oneshot};
use uuid::Uuid;

use crate::campaigns::{CampaignHub, CampaignRequest};
use crate::config::ServiceConfig;
use crate::envelope::timestamp;
use crate::error::ApiError;
use crate::idempotency::{IdempotencyCache, HEADER};
use crate::remote::{RemoteProvider, RemoteValidator};
use crate::runs::{spawn_run, Command, Registry, RunFeed};
use crate::store::{RunRecord, Store};

/// Close code sent to a subscriber that fell behind; the reason carries `{"resume_from": seq}`.
pub const CLOSE_LAGGED: u16 = 4000;

/// Tries each provider in order; the first success wins.
pub struct ProviderChain {
    providers: Vec<Box<dyn WorkflowProvider>>,
}

impl ProviderChain {
    pub fn from_config(config: &ServiceConfig) -> Self {
        let mut providers: Vec<Box<dyn WorkflowProvider>> = Vec::new();
        if config.provider.fixtures {
            providers.push(Box::new(FixtureProvider::builtin()));
        }
        if let Some(dir) = &config.provider.dir {
            providers.push(Box::new(FileProvider::new(dir)));
        }
        if let Some(url) = &config.provider.url {
            providers.push(Box::new(RemoteProvider { url: url.clone() }));
        }
        Self { providers }
    }
}

impl WorkflowProvider for ProviderChain {
    fn id(&self) -> &str {
        "chain"
    }

    fn generate(&self, query: &str, env: &EnvConfig) -> Result<String, ProviderError> {
        let mut errors = Vec::new();
        for p in &self.providers {
            match p.generate(query, env) {
                Ok(text) => return Ok(text),
                Err(e) => errors.push(format!("{}: {e}", p.id())),
            }
        }
        if errors.is_empty() {
            errors.push("no workflow provider configured".into());
        }
        Err(ProviderError(errors.join("; ")))
    }
}

struct RunEntry {
    feed: Arc<RunFeed>,
    commands: Option<mpsc::UnboundedSender<Command>>,
}

pub struct App {
    config: ServiceConfig,
    envs: IndexMap<String, EnvConfig>,
    registry: Arc<Registry>,
    runs: RwLock<HashMap<Uuid, RunEntry>>,
    detectors: Mutex<HashMap<String, Detector>>,
    provider: Arc<dyn WorkflowProvider>,
    campaigns: Arc<CampaignHub>,
    idempotency: IdempotencyCache,
}

impl App {
    /// Opens the data directory and recovers persisted runs and campaigns.
    pub fn open(config: ServiceConfig) -> std::io::Result<Arc<Self>> {
        let provider = Arc::new(ProviderChain::from_config(&config));
        Self::open_with_provider(config, provider)
    }

    pub fn open_with_provider(
        config: ServiceConfig,
        provider: Arc<dyn WorkflowProvider>,
    ) -> std::io::Result<Arc<Self>> {
        let store = Store::open(&config.data_dir)?;
        let recovered = store.recover()?;
        let mut runs = HashMap::new();
        let mut records = Vec::new();
        for (record, lines) in recovered {
            runs.insert(
                record.id,
                RunEntry {
                    feed: Arc::new(RunFeed::closed(lines)),
                    commands: None,
                },
            );
            records.push(record);
        }
        let step_delay = Duration::from_millis(config.step_delay_ms);
        let campaigns = CampaignHub::open(
            store.clone(),
            config.datasets.clone(),
            config.gp_config(),
            config.proposer_url.clone(),
            step_delay,
        )?;
        let idempotency = IdempotencyCache::with_journal(store.journal_path())?;
        Ok(Arc::new(Self {
            envs: config.env_catalog(),
            registry: Arc::new(Registry::new(store, records)),
            runs: RwLock::new(runs),
            detectors: Mutex::new(HashMap::new()),
            provider,
            campaigns: Arc::new(campaigns),
            idempotency,
            config,
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn run(&self, id: Uuid) -> Option<RunRecord> {
        self.registry.get(id)
    }

    fn env(&self, id: &str) -> Result<&EnvConfig, ApiError> {
        self.envs
            .get(id)
            .ok_or_else(|| ApiError::not_found("unknown_env", format!("no env `{id}`")))
    }

    /// Calibrated once per env. Blocking.
    fn detector(&self, env: &EnvConfig) -> Result<Detector, ApiError> {
        if let Some(d) = self.detectors.lock().expect("detector lock").get(&env.id) {
            return Ok(d.clone());
        }
        let mut d = Detector::calibrated(env, self.config.detector_config())
            .map_err(|e| ApiError::internal(e.to_string()))?;
        if let Some(url) = &self.config.validator_url {
            d = d.with_validator(Arc::new(RemoteValidator { url: url.clone() }));
        }
        self.detectors
            .lock()
            .expect("detector lock")
            .insert(env.id.clone(), d.clone());
        Ok(d)
    }

    fn feed(&self, id: Uuid) -> Option<Arc<RunFeed>> {
        self.runs
            .read()
            .expect("runs lock")
            .get(&id)
            .map(|e| e.feed.clone())
    }

    fn commands(&self, id: Uuid) -> Option<mpsc::UnboundedSender<Command>> {
        self.runs
            .read()
            .expect("runs lock")
            .get(&id)
            .and_then(|e| e.commands.clone())
    }

    /// Resolves, parses, checks and launches a run. Blocking.
    fn start_run(
        &self,
        input: RunInput,
        env_id: &str,
        faults: Vec<FaultInjection>,
    ) -> Result<RunRecord, ApiError> {
        let env = self.env(env_id)?;
        let detector = self.detector(env)?;
        let session = RunSession::start(
            &input,
            env,
            self.provider.as_ref(),
            detector,
            faults.clone(),
        )?;
        let id = Uuid::new_v4();
        let now = timestamp(Utc::now());
        let record = RunRecord {
            id,
            status: session.status(),
            env: env.id.clone(),
            input,
            faults,
            program: render_program(&session.checked().program),
            revision: session.executor().revision(),
            pc: 0,
            findings: session.checked().findings.clone(),
            transcript: session.transcript().map(str::to_string),
            alerts: Vec::new(),
            events: 0,
            log: Store::log_name(id),
            created_at: now.clone(),
            updated_at: now,
        };
        let writer = self
            .registry
            .store()
            .create_log(id)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        self.registry.put(record.clone(), true);
        let feed = Arc::new(RunFeed::live(self.config.event_buffer));
        let commands = spawn_run(
            session,
            record.clone(),
            writer,
            feed.clone(),
            self.registry.clone(),
            Duration::from_millis(self.config.step_delay_ms),
        );
        self.runs.write().expect("runs lock").insert(
            id,
            RunEntry {
                feed,
                commands: Some(commands),
            },
        );
        Ok(record)
    }

    async fn command<T>(
        &self,
        id: Uuid,
        make: impl FnOnce(oneshot::Sender<Result<T, ApiError>>) -> Command,
    ) -> Option<Result<T, ApiError>> {
        let tx = self.commands(id)?;
        let (reply, rx) = oneshot::channel();
        tx.send(make(reply)).ok()?;
        rx.await.ok()
    }
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/envs", get(envs))
        .route("/bench", get(bench))
        .route("/rubric", get(rubric_levels))
        .route("/check", post(check))
        .route("/runs", post(start_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/stop", post(stop_run))
        .route("/runs/{id}/alerts/{aid}/resolve", post(resolve_alert))
        .route("/runs/{id}/events", get(events))
        .route("/campaigns", post(create_campaign).get(list_campaigns))
        .route("/campaigns/{id}", get(get_campaign))
        .with_state(app)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    app: Arc<App>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
}

type Outcome = Result<(StatusCode, Value), ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    if body.is_empty() {
        return serde_json::from_str("{}").map_err(|e| ApiError::bad_request(e.to_string()));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("resources serialize")
}

fn respond(status: u16, body: Value) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(body)).into_response()
}

async fn idempotent<F>(app: &App, headers: &HeaderMap, scope: String, run: F) -> Response
where
    F: std::future::Future<Output = Outcome>,
{
    let flatten = |o: Outcome| match o {
        Ok((s, v)) => (s.as_u16(), v),
        Err(e) => (e.status.as_u16(), e.body()),
    };
    let key = headers.get(HEADER).and_then(|v| v.to_str().ok());
    let (status, body) = match key {
        Some(k) => {
            app.idempotency
                .run(format!("{scope} {k}"), || async { flatten(run.await) })
                .await
        }
        None => flatten(run.await),
    };
    respond(status, body)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_id(raw: &str, what: &'static str) -> Result<Uuid, ApiError> {
    Uuid::parse_str(raw).map_err(|_| ApiError::not_found(what, format!("no {what} `{raw}`")))
}

async fn health(State(app): State<Arc<App>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "runs": app.registry.list().len(),
        "campaigns": app.campaigns.list().len(),
    }))
}

async fn envs(State(app): State<Arc<App>>) -> Json<Value> {
    Json(json!(app.envs.keys().collect::<Vec<_>>()))
}

async fn bench() -> Json<Value> {
    Json(to_value(&generate_benchmark()))
}

async fn rubric_levels() -> Json<Value> {
    Json(to_value(&rubric()))
}

fn default_env() -> String {
    labrun_core::ir::DEFAULT_ENV.to_string()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckBody {
    program: String,
    #[serde(default = "default_env")]
    env: String,
    /// Check as a replacement for this live run, from its current world.
    #[serde(default)]
    run: Option<Uuid>,
}

fn checked_body(checked: &CheckedProgram) -> Value {
    json!({
        "program": render_program(&checked.program),
        "findings": checked.findings,
    })
}

async fn check(State(app): State<Arc<App>>, body: Bytes) -> Response {
    let out: Outcome = async {
        let req: CheckBody = parse_body(&body)?;
        if let Some(id) = req.run {
            let record = app
                .run(id)
                .ok_or_else(|| ApiError::not_found("run", format!("no run `{id}`")))?;
            let program = req.program;
            let checked = app
                .command(id, |reply| Command::Check { program, reply })
                .await
                .ok_or_else(|| {
                    ApiError::conflict("already_terminal", format!("run is {}", record.status))
                })??;
            return Ok((StatusCode::OK, checked_body(&checked)));
        }
        let env = app.env(&req.env)?.clone();
        blocking(move || {
            let program = parse_protocol(&req.program)?;
            let checked = check_program(&program, &env)
                .map_err(labrun_core::orchestrator::PipelineError::UnrepairableProgram)?;
            Ok((StatusCode::OK, checked_body(&checked)))
        })
        .await
    }
    .await;
    match out {
        Ok((s, v)) => (s, Json(v)).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FaultSpec {
    Spec(String),
    Full(FaultInjection),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StartBody {
    program: Option<String>,
    query: Option<String>,
    #[serde(default = "default_env")]
    env: String,
    #[serde(default)]
    faults: Vec<FaultSpec>,
}

async fn start_run(State(app): State<Arc<App>>, headers: HeaderMap, body: Bytes) -> Response {
    let work = {
        let app = app.clone();
        async move {
            let req: StartBody = parse_body(&body)?;
            let input = match (req.program, req.query) {
                (Some(p), None) => RunInput::Program(p),
                (None, Some(q)) => RunInput::Query(q),
                _ => {
                    return Err(ApiError::bad_request(
                        "give exactly one of `program` or `query`",
                    ))
                }
            };
            let faults = req
                .faults
                .into_iter()
                .map(|f| match f {
                    FaultSpec::Spec(s) => {
                        FaultInjection::parse_spec(&s).map_err(ApiError::bad_request)
                    }
                    FaultSpec::Full(f) => Ok(f),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let env = req.env;
            let record = blocking(move || app.start_run(input, &env, faults)).await?;
            Ok((StatusCode::CREATED, to_value(&record)))
        }
    };
    idempotent(&app, &headers, "POST /runs".into(), work).await
}

async fn list_runs(State(app): State<Arc<App>>) -> Json<Value> {
    Json(to_value(&app.registry.list()))
}

async fn get_run(State(app): State<Arc<App>>, Path(id): Path<String>) -> Response {
    match parse_id(&id, "run").and_then(|id| {
        app.run(id)
            .ok_or_else(|| ApiError::not_found("run", format!("no run `{id}`")))
    }) {
        Ok(r) => Json(to_value(&r)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn stop_run(
    State(app): State<Arc<App>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Response {
    let scope = format!("POST /runs/{id}/stop");
    let work = async {
        let id = parse_id(&id, "run")?;
        let record = app
            .run(id)
            .ok_or_else(|| ApiError::not_found("run", format!("no run `{id}`")))?;
        match app.command(id, Command::Stop).await {
            Some(r) => r.map(|rec| (StatusCode::OK, to_value(&rec))),
            None => {
                let status = app.run(id).map_or(record.status, |r| r.status);
                Err(ApiError::conflict(
                    "already_terminal",
                    format!("run is already {status}"),
                ))
            }
        }
    };
    idempotent(&app, &headers, scope, work).await
}

async fn resolve_alert(
    State(app): State<Arc<App>>,
    headers: HeaderMap,
    Path((id, raw_aid)): Path<(String, String)>,
    body: Bytes,
) -> Response {
    let scope = format!("POST /runs/{id}/alerts/{raw_aid}/resolve");
    let work = async {
        let id = parse_id(&id, "run")?;
        let aid: u32 = raw_aid
            .parse()
            .map_err(|_| ApiError::not_found("unknown_alert", format!("no alert `{raw_aid}`")))?;
        app.run(id)
            .ok_or_else(|| ApiError::not_found("run", format!("no run `{id}`")))?;
        let resolution: Resolution = parse_body(&body)?;
        match app
            .command(id, |reply| Command::Resolve {
                alert: aid,
                resolution,
                reply,
            })
            .await
        {
            Some(r) => r.map(|rec| (StatusCode::OK, to_value(&rec))),
            None => {
                let record = app.run(id).expect("record exists");
                let Some(alert) = record.alerts.iter().find(|a| a.id == aid) else {
                    return Err(ApiError::not_found(
                        "unknown_alert",
                        format!("no alert {aid}"),
                    ));
                };
                if alert.state != labrun_core::orchestrator::AlertState::Open {
                    return Err(ApiError::conflict(
                        "alert_not_open",
                        format!("alert {aid} is already resolved"),
                    ));
                }
                Err(ApiError::conflict(
                    "run_not_suspended",
                    format!("run is {}, not awaiting a replan", record.status),
                ))
            }
        }
    };
    idempotent(&app, &headers, scope, work).await
}

#[derive(Deserialize)]
struct FromQuery {
    #[serde(default)]
    from: u64,
}

async fn events(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    Query(q): Query<FromQuery>,
    ws: WebSocketUpgrade,
) -> Response {
    let feed = match parse_id(&id, "run").map(|id| app.feed(id)) {
        Ok(Some(f)) => f,
        Ok(None) => return ApiError::not_found("run", format!("no run `{id}`")).into_response(),
        Err(e) => return e.into_response(),
    };
    ws.on_upgrade(move |socket| stream(socket, feed, q.from))
}

fn close(code: u16, reason: String) -> Message {
    Message::Close(Some(CloseFrame {
        code,
        reason: reason.into(),
    }))
}

async fn stream(mut socket: WebSocket, feed: Arc<RunFeed>, from: u64) {
    let sub = feed.subscribe(from);
    for line in &sub.backlog {
        if socket
            .send(Message::Text(line.as_ref().into()))
            .await
            .is_err()
        {
            return;
        }
    }
    let mut seq = sub.next;
    if let Some(mut rx) = sub.live {
        loop {
            tokio::select! {
                msg = rx.recv() => match msg {
                    Ok(line) => {
                        if seq >= from
                            && socket.send(Message::Text(line.as_ref().into())).await.is_err()
                        {
                            return;
                        }
                        seq += 1;
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => {
                        let cursor = seq.max(from);
                        let _ = socket
                            .send(close(CLOSE_LAGGED, json!({ "resume_from": cursor }).to_string()))
                            .await;
                        return;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                incoming = socket.recv() => match incoming {
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => {}
                },
            }
        }
    }
    let _ = socket.send(close(1000, "end of stream".into())).await;
}

async fn create_campaign(State(app): State<Arc<App>>, headers: HeaderMap, body: Bytes) -> Response {
    let work = {
        let hub = app.campaigns.clone();
        async move {
            let req: CampaignRequest = parse_body(&body)?;
            let resource = blocking(move || hub.create(req)).await?;
            Ok((StatusCode::CREATED, to_value(&resource)))
        }
    };
    idempotent(&app, &headers, "POST /campaigns".into(), work).await
}

async fn list_campaigns(State(app): State<Arc<App>>) -> Json<Value> {
    Json(to_value(&app.campaigns.list()))
}

async fn get_campaign(State(app): State<Arc<App>>, Path(id): Path<String>) -> Response {
    match parse_id(&id, "campaign").and_then(|id| {
        app.campaigns
            .get(id)
            .ok_or_else(|| ApiError::not_found("campaign", format!("no campaign `{id}`")))
    }) {
        Ok(c) => Json(to_value(&c)).into_response(),
        Err(e) => e.into_response(),
    }
}
