//! Starts the service in-process, launches a HepG2 run with a missing-tip fault, follows the
//! event stream, replans the suspended run over HTTP and prints every envelope kind.

use futures::StreamExt;
use labrun_service::config::ServiceConfig;
use labrun_service::server::{serve, App};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        step_delay_ms: 5,
        ..ServiceConfig::default()
    };
    let app = App::open(config)?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(serve(app, listener, std::future::pending()));

    let http = reqwest::Client::new();
    let run: Value = http
        .post(format!("{base}/runs"))
        .json(&json!({
            "query": "How to change the medium for HepG2 cells in detail?",
            "faults": ["2@1"],
        }))
        .send()
        .await?
        .json()
        .await?;
    let id = run["id"].as_str().unwrap().to_string();
    println!("run {id} started");

    let url = format!("{}/runs/{id}/events?from=0", base.replace("http", "ws"));
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await?;
    while let Some(msg) = ws.next().await {
        let Message::Text(text) = msg? else { break };
        let env: Value = serde_json::from_str(&text)?;
        println!("{:>3} {}", env["seq"], env["kind"].as_str().unwrap());
        if env["kind"] == "alert_raised" {
            println!("    {}", env["payload"]["message"].as_str().unwrap());
            let run = loop {
                let run: Value = http
                    .get(format!("{base}/runs/{id}"))
                    .send()
                    .await?
                    .json()
                    .await?;
                if run["status"] == "awaiting_replan" {
                    break run;
                }
                tokio::time::sleep(std::time::Duration::from_millis(5)).await;
            };
            let pc = run["pc"].as_u64().unwrap() as usize;
            let rest: Vec<&str> = run["program"]
                .as_str()
                .unwrap()
                .lines()
                .filter(|l| !l.starts_with('#'))
                .skip(pc)
                .collect();
            let alert = run["alerts"][0]["id"].clone();
            let resolved: Value = http
                .post(format!("{base}/runs/{id}/alerts/{alert}/resolve"))
                .json(&json!({ "action": "replace_program", "program": rest.join("\n") }))
                .send()
                .await?
                .json()
                .await?;
            println!("    replanned, status {}", resolved["status"]);
        }
    }
    let run: Value = http
        .get(format!("{base}/runs/{id}"))
        .send()
        .await?
        .json()
        .await?;
    println!(
        "final status {} after {} events",
        run["status"], run["events"]
    );
    Ok(())
}
