use std::path::PathBuf;

use clap::Parser;
use oodida::net::TcpConnector;
use oodida::user::{UserConfig, UserNode};

/// User node: relays one analyst's front-end connections to the cloud.
#[derive(Parser)]
struct Args {
    /// User-facing address of the cloud.
    #[arg(long)]
    cloud: String,
    /// Address front-ends connect to.
    #[arg(long, default_value = "127.0.0.1:7600")]
    listen: String,
    /// Write each terminal result to <dir>/<assignment_id>.json.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    #[arg(long, default_value = "analyst")]
    user: String,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let args = Args::parse();
    if let Some(d) = &args.dump_dir {
        std::fs::create_dir_all(d)?;
    }
    let config = UserConfig {
        dump_dir: args.dump_dir,
        user: args.user,
        ..UserConfig::default()
    };
    let (node, addr) = UserNode::bind(config, TcpConnector::new(args.cloud), &args.listen).await?;
    tracing::info!(%addr, "user node listening");
    println!("listening {addr}");
    tokio::signal::ctrl_c().await?;
    node.shutdown();
    Ok(())
}
