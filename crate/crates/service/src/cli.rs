use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rexplain_core::domains::{build_domain, DomainSpec};
use rexplain_core::experiment::{
    analyze_hypotheses, read_jsonl, read_results, replay, run_simulated_experiment, ContextCache, ExperimentConfig,
    CONFIG_FILE, EVENTS_FILE, RESULTS_FILE,
};
use rexplain_core::Domain;

use crate::api::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "rexplain", version, about = "Reward explanation experiments on linear-reward MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a domain (resolved spec plus MDP) from a domain spec file.
    GenDomain {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every condition with simulated participants and write the results.
    Simulate {
        /// Experiment config; the default grid when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured participants per condition.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory for the event log.
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the directional hypothesis report for a results directory.
    Analyze {
        #[arg(long)]
        results: PathBuf,
    },
    /// Replay a results directory's event log and check every logged report.
    Replay {
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error(transparent)]
    Experiment(#[from] rexplain_core::experiment::ExperimentError),
    #[error(transparent)]
    Domain(#[from] rexplain_core::domains::DomainError),
    #[error("server: {0}")]
    Server(String),
}

fn file_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::File { path: path.to_path_buf(), message: e.to_string() }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| file_error(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| file_error(path, e))?;
    fs::write(path, text + "\n").map_err(|e| file_error(path, e))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), read_json)
}

pub fn gen_domain(profile: &Path, seed: u64, out: &Path) -> Result<Domain, CliError> {
    let spec: DomainSpec = read_json(profile)?;
    let domain: Domain = build_domain(&spec, seed)?;
    write_json(out, &domain)?;
    Ok(domain)
}

pub fn simulate(config: Option<&Path>, seed: u64, out: &Path, replicates: Option<usize>) -> Result<(), CliError> {
    let mut config = load_config(config)?;
    if let Some(r) = replicates {
        config.replicates = r;
    }
    let results = run_simulated_experiment(&config, seed)?;
    results.write_dir(out, &config)?;
    Ok(())
}

pub fn analyze(results: &Path) -> Result<String, CliError> {
    let rows = read_results(&results.join(RESULTS_FILE))?;
    let report = analyze_hypotheses(&rows)?;
    serde_json::to_string_pretty(&report).map_err(|e| file_error(results, e))
}

/// Returns the number of sessions replayed.
pub fn replay_dir(results: &Path) -> Result<usize, CliError> {
    let config: ExperimentConfig = read_json(&results.join(CONFIG_FILE))?;
    let cache = ContextCache::new(config)?;
    let records = read_jsonl(&results.join(EVENTS_FILE))?;
    Ok(replay(&records, &cache)?.len())
}

pub async fn serve(host: &str, port: u16, log: &Path, config: Option<&Path>) -> Result<(), CliError> {
    let config = load_config(config)?;
    let state = tokio::task::block_in_place(|| AppState::with_log_dir(config, log))?;
    let app = router(Arc::new(state));
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .map_err(|e| CliError::Server(e.to_string()))?;
    tracing::info!(address = %format!("{host}:{port}"), "listening");
    axum::serve(listener, app).await.map_err(|e| CliError::Server(e.to_string()))
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenDomain { profile, seed, out } => {
            let domain = gen_domain(&profile, seed, &out)?;
            println!("{} ({} states) -> {}", domain.mdp.id, domain.mdp.num_states, out.display());
        }
        Command::Simulate { config, seed, out, replicates } => {
            tokio::task::block_in_place(|| simulate(config.as_deref(), seed, &out, replicates))?;
            println!("results written to {}", out.display());
        }
        Command::Serve { port, host, log, config } => serve(&host, port, &log, config.as_deref()).await?,
        Command::Analyze { results } => println!("{}", analyze(&results)?),
        Command::Replay { results } => {
            let n = tokio::task::block_in_place(|| replay_dir(&results))?;
            println!("replayed {n} sessions; every logged report matches");
        }
    }
    Ok(())
}
