//! `labrun` subcommands.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::{Parser, Subcommand};
use labrun_core::checker::check_program;
use labrun_core::detector::Detector;
use labrun_core::env::EnvConfig;
use labrun_core::ir::render_program;
use labrun_core::optimizer::{
    load_dataset, run_campaign, select_init, BayesProposer, NearestOracle, Proposer,
    RandomProposer, DEFAULT_BUDGET, DEFAULT_INIT, INIT_MAX_SCORE,
};
use labrun_core::orchestrator::{
    execute_pipeline, generate_benchmark, parse_protocol, FixtureProvider, RunInput,
};
use labrun_core::sim::{FaultInjection, RunStatus};
use uuid::Uuid;

use crate::campaigns::synthetic;
use crate::config::ServiceConfig;
use crate::envelope::EventEnvelope;
use crate::remote::remote_proposer;
use crate::server::{serve, App};

#[derive(Parser)]
#[command(
    name = "labrun",
    version,
    about = "Protocol checking, simulated execution and optimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Parse and check a protocol; prints the repaired program and findings as JSON.
    Check {
        file: PathBuf,
        /// Environment TOML (defaults to the builtin lab).
        #[arg(long)]
        env: Option<PathBuf>,
    },
    /// Execute a protocol in the simulator with anomaly monitoring; prints event envelopes.
    Run {
        file: PathBuf,
        /// SCENARIO@INDEX[:PHASE], repeatable.
        #[arg(long = "fault")]
        faults: Vec<String>,
        #[arg(long)]
        env: Option<PathBuf>,
    },
    /// Benchmark queries.
    Bench {
        #[command(subcommand)]
        action: BenchCmd,
    },
    /// Run one optimization campaign; prints the campaign as JSON.
    Optimize {
        #[arg(long, value_parser = ["random", "bayes", "remote"])]
        proposer: String,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset CSV; the builtin synthetic surface when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Low performers drawn from the dataset as prior history.
        #[arg(long, default_value_t = DEFAULT_INIT)]
        init: usize,
        /// Endpoint for the remote proposer.
        #[arg(long)]
        url: Option<String>,
    },
    /// Start the HTTP/WebSocket service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
    },
}

#[derive(Subcommand)]
pub enum BenchCmd {
    /// Print the 70 benchmark queries as JSON.
    Emit,
}

pub fn main() -> i32 {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("LABRUN_LOG")
                .unwrap_or_else(|_| "info".into()),
        )
        .init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

type CliResult = Result<i32, Box<dyn std::error::Error>>;

fn load_env(path: Option<&Path>) -> Result<EnvConfig, Box<dyn std::error::Error>> {
    Ok(match path {
        Some(p) => EnvConfig::from_toml_str(&std::fs::read_to_string(p)?)?,
        None => EnvConfig::default_lab(),
    })
}

fn print_json(v: &impl serde::Serialize) -> Result<(), Box<dyn std::error::Error>> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

pub fn execute(cli: Cli) -> CliResult {
    match cli.command {
        Cmd::Check { file, env } => check(&file, env.as_deref()),
        Cmd::Run { file, faults, env } => run(&file, &faults, env.as_deref()),
        Cmd::Bench {
            action: BenchCmd::Emit,
        } => {
            print_json(&generate_benchmark())?;
            Ok(0)
        }
        Cmd::Optimize {
            proposer,
            budget,
            seed,
            dataset,
            init,
            url,
        } => optimize(&proposer, budget, seed, dataset.as_deref(), init, url),
        Cmd::Serve {
            port,
            data_dir,
            config,
            bind,
        } => {
            let mut config = ServiceConfig::resolve(config.as_deref())?;
            if let Some(p) = port {
                config.port = p;
            }
            if let Some(d) = data_dir {
                config.data_dir = d;
            }
            config.validate()?;
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?;
            rt.block_on(async move {
                let addr = SocketAddr::new(bind, config.port);
                let app = App::open(config)?;
                let listener = tokio::net::TcpListener::bind(addr).await?;
                println!("listening on http://{}", listener.local_addr()?);
                std::io::stdout().flush()?;
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                serve(app, listener, shutdown).await
            })?;
            Ok(0)
        }
    }
}

fn check(file: &Path, env: Option<&Path>) -> CliResult {
    let env = load_env(env)?;
    let program = parse_protocol(&std::fs::read_to_string(file)?)?;
    match check_program(&program, &env) {
        Ok(checked) => {
            print_json(&serde_json::json!({
                "program": render_program(&checked.program),
                "findings": checked.findings,
            }))?;
            Ok(0)
        }
        Err(e) => {
            print_json(&serde_json::json!({ "error": e.to_string(), "findings": e.findings() }))?;
            Ok(1)
        }
    }
}

fn run(file: &Path, faults: &[String], env: Option<&Path>) -> CliResult {
    let env = load_env(env)?;
    let faults = faults
        .iter()
        .map(|s| FaultInjection::parse_spec(s))
        .collect::<Result<Vec<_>, _>>()?;
    let input = RunInput::Program(std::fs::read_to_string(file)?);
    let detector = Detector::standard(&env)?;
    let mut session =
        execute_pipeline(&input, &env, &FixtureProvider::builtin(), detector, faults)?;
    let status = session.run();
    let run_id = Uuid::new_v4();
    let now = Utc::now();
    let mut out = std::io::stdout().lock();
    for (seq, e) in session.events().iter().enumerate() {
        writeln!(
            out,
            "{}",
            EventEnvelope::new(seq as u64, run_id, e, now).to_line()
        )?;
    }
    drop(out);
    eprintln!("status: {status}");
    if let Some(alert) = session.open_alert() {
        eprintln!("open alert {}: {}", alert.id, alert.message);
    }
    Ok(if status == RunStatus::Completed { 0 } else { 1 })
}

fn optimize(
    name: &str,
    budget: usize,
    seed: u64,
    dataset: Option<&Path>,
    init: usize,
    url: Option<String>,
) -> CliResult {
    let dataset = match dataset {
        Some(p) => load_dataset(p)?,
        None => synthetic(),
    };
    let oracle = NearestOracle::new(dataset)?;
    let mut proposer: Box<dyn Proposer> = match name {
        "random" => Box::new(RandomProposer),
        "bayes" => Box::new(BayesProposer::default()),
        _ => {
            let url = url.ok_or("--url is required for the remote proposer")?;
            Box::new(remote_proposer(&url))
        }
    };
    let init = if init == 0 {
        Vec::new()
    } else {
        select_init(oracle.dataset(), init, INIT_MAX_SCORE, seed)?
    };
    let mut campaign = run_campaign(proposer.as_mut(), &oracle, budget, init, seed)?;
    campaign.dataset_hash = Some(oracle.dataset().content_hash());
    print_json(&campaign)?;
    Ok(if campaign.error.is_some() { 1 } else { 0 })
}
