#![allow(dead_code)]

use std::future::Future;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::StreamExt;
use labrun_service::config::ServiceConfig;
use labrun_service::server::{serve, App};
use serde_json::Value;
use tokio::sync::oneshot;
use tokio_tungstenite::tungstenite::protocol::CloseFrame;
use tokio_tungstenite::tungstenite::Message;

pub const HEPG2: &str = "How to change the medium for HepG2 cells in detail?";

pub struct TestServer {
    pub base: String,
    pub app: Arc<App>,
    stop: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
    http: reqwest::Client,
}

/// Serves an `App` on an ephemeral port, with `data_dir` pointed at `dir`.
pub async fn start(dir: &Path, tweak: impl FnOnce(&mut ServiceConfig)) -> TestServer {
    let mut config = ServiceConfig {
        data_dir: dir.to_path_buf(),
        ..ServiceConfig::default()
    };
    tweak(&mut config);
    let app = tokio::task::spawn_blocking(move || App::open(config))
        .await
        .unwrap()
        .expect("app opens");
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (stop, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(serve(app.clone(), listener, async {
        let _ = rx.await;
    }));
    TestServer {
        base,
        app,
        stop: Some(stop),
        task: Some(tokio::spawn(async move {
            task.await.unwrap().unwrap();
        })),
        http: reqwest::Client::new(),
    }
}

impl TestServer {
    pub async fn shutdown(mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.task.take() {
            let _ = tokio::time::timeout(Duration::from_secs(5), t).await;
        }
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self
            .http
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r.json().await.unwrap_or(Value::Null))
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        self.post_keyed(path, body, None).await
    }

    pub async fn post_keyed(&self, path: &str, body: Value, key: Option<&str>) -> (u16, Value) {
        let mut req = self.http.post(format!("{}{path}", self.base)).json(&body);
        if let Some(k) = key {
            req = req.header("Idempotency-Key", k);
        }
        let r = req.send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap_or(Value::Null))
    }

    pub fn ws_url(&self, run: &str, from: u64) -> String {
        format!(
            "{}/runs/{run}/events?from={from}",
            self.base.replacen("http", "ws", 1)
        )
    }

    /// Collects text messages until the server closes the stream.
    pub async fn stream(&self, run: &str, from: u64) -> (Vec<String>, Option<CloseFrame>) {
        collect(&self.ws_url(run, from)).await
    }

    /// Polls `GET /runs/{id}` until `done` holds.
    pub async fn wait_run(&self, id: &str, done: impl Fn(&Value) -> bool) -> Value {
        let path = format!("/runs/{id}");
        poll(|| async { self.get(&path).await.1 }, done).await
    }

    pub async fn wait_campaign(&self, id: &str, done: impl Fn(&Value) -> bool) -> Value {
        let path = format!("/campaigns/{id}");
        poll(|| async { self.get(&path).await.1 }, done).await
    }
}

pub async fn poll<F, Fut>(mut fetch: F, done: impl Fn(&Value) -> bool) -> Value
where
    F: FnMut() -> Fut,
    Fut: Future<Output = Value>,
{
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let v = fetch().await;
        if done(&v) {
            return v;
        }
        assert!(Instant::now() < deadline, "timed out waiting; last {v}");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

pub async fn collect(url: &str) -> (Vec<String>, Option<CloseFrame>) {
    let (mut ws, _) = tokio_tungstenite::connect_async(url)
        .await
        .expect("ws connects");
    let mut lines = Vec::new();
    while let Some(msg) = ws.next().await {
        match msg.expect("ws message") {
            Message::Text(t) => lines.push(t.to_string()),
            Message::Close(frame) => return (lines, frame),
            _ => {}
        }
    }
    (lines, None)
}

pub fn is_terminal(run: &Value) -> bool {
    matches!(
        run["status"].as_str(),
        Some("completed" | "aborted" | "failed" | "interrupted")
    )
}

pub fn log_lines(dir: &Path, run: &Value) -> Vec<String> {
    let text = std::fs::read_to_string(dir.join(run["log"].as_str().unwrap())).unwrap();
    text.lines().map(str::to_string).collect()
}

/// The instructions from `pc` on, as program text.
pub fn remaining(run: &Value) -> String {
    let pc = run["pc"].as_u64().unwrap() as usize;
    let program = run["program"].as_str().unwrap();
    program
        .lines()
        .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .skip(pc)
        .collect::<Vec<_>>()
        .join("\n")
}
