use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use oodida::client::{Agent, ClientConfig, DataConfig, ExecutorMode, SourceConfig};
use oodida::net::TcpConnector;

/// Client agent for one device.
#[derive(Parser)]
struct Args {
    #[arg(long)]
    id: String,
    /// Client-facing address of the cloud.
    #[arg(long)]
    cloud: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replay a timestamp,signal,value CSV instead of synthetic data.
    #[arg(long, conflicts_with = "source_config")]
    replay: Option<PathBuf>,
    /// Synthetic signal models (TOML).
    #[arg(long)]
    source_config: Option<PathBuf>,
    /// Run every task through this shell command.
    #[arg(long, conflicts_with = "dummy")]
    external: Option<String>,
    /// Answer every task immediately with an empty result.
    #[arg(long)]
    dummy: bool,
    #[arg(long, default_value_t = 5000)]
    heartbeat_ms: u64,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let args = Args::parse();
    let data = match (args.replay, args.source_config) {
        (Some(p), _) => DataConfig::Replay(p),
        (None, Some(p)) => DataConfig::Synthetic(SourceConfig::parse(&std::fs::read_to_string(p)?)?),
        (None, None) => DataConfig::Synthetic(SourceConfig::default()),
    };
    let executor = match (args.external, args.dummy) {
        (Some(command), _) => ExecutorMode::External { command },
        (None, true) => ExecutorMode::Dummy,
        (None, false) => ExecutorMode::Builtin,
    };
    let config = ClientConfig {
        seed: args.seed,
        data,
        executor,
        heartbeat_interval: Duration::from_millis(args.heartbeat_ms),
        ..ClientConfig::new(args.id)
    };
    let agent = Agent::spawn(config, TcpConnector::new(args.cloud))?;
    tokio::signal::ctrl_c().await?;
    agent.stop();
    agent.stopped().await;
    Ok(())
}
