//! Launches a Bayesian campaign through the service and polls its growing trajectory.

use std::time::Duration;

use labrun_service::config::ServiceConfig;
use labrun_service::server::{serve, App};
use serde_json::{json, Value};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        step_delay_ms: 50,
        ..ServiceConfig::default()
    };
    let app = App::open(config)?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(serve(app, listener, std::future::pending()));

    let http = reqwest::Client::new();
    let created: Value = http
        .post(format!("{base}/campaigns"))
        .header("Idempotency-Key", "example-1")
        .json(&json!({ "proposer": "bayes", "budget": 20, "seed": 4 }))
        .send()
        .await?
        .json()
        .await?;
    let id = created["id"].as_str().unwrap();
    let mut shown = 0;
    loop {
        let c: Value = http
            .get(format!("{base}/campaigns/{id}"))
            .send()
            .await?
            .json()
            .await?;
        let best = c["campaign"]["best_so_far"].as_array().unwrap();
        for (i, b) in best.iter().enumerate().skip(shown) {
            println!(
                "iteration {:>2}: best so far {:.4}",
                i + 1,
                b.as_f64().unwrap()
            );
        }
        shown = best.len();
        if c["status"] != "running" {
            println!("campaign {}", c["status"]);
            break;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    Ok(())
}
