use std::fs::OpenOptions;
use std::path::PathBuf;

use clap::Parser;
use oodida::cloud::Cloud;
use oodida::config::CloudConfig;
use oodida::events::EventLog;

/// Central cloud node: accepts assignments from user nodes and tasks them
/// out to connected clients.
#[derive(Parser)]
struct Args {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    user_listen: Option<String>,
    #[arg(long)]
    client_listen: Option<String>,
    /// Append one JSON line per state transition to this file.
    #[arg(long)]
    event_log: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let args = Args::parse();
    let mut config = match &args.config {
        Some(p) => CloudConfig::load(p)?,
        None => CloudConfig::default(),
    };
    config.apply_env()?;
    if let Some(a) = args.user_listen {
        config.user_listen = a;
    }
    if let Some(a) = args.client_listen {
        config.client_listen = a;
    }
    let log_path = args.event_log.or_else(|| config.event_log.clone().map(PathBuf::from));
    let events = match log_path {
        Some(p) => EventLog::with_sink(Box::new(OpenOptions::new().create(true).append(true).open(p)?)),
        None => EventLog::new(),
    };
    let server = Cloud::bind(config, events).await?;
    tracing::info!(user = %server.user_addr, client = %server.client_addr, "cloud listening");
    println!("user {} client {}", server.user_addr, server.client_addr);
    tokio::signal::ctrl_c().await?;
    server.cloud.shutdown();
    Ok(())
}
