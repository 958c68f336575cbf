use std::path::PathBuf;
use std::time::Duration;

use clap::{Parser, Subcommand};
use oodida::client::ClientConfig;
use oodida::harness::{
    run_iteration_bench, run_surge, run_throughput, DeploymentConfig, LatencyReport, LocalDeployment, ScenarioSpec,
    Transport, ValueWidth,
};
use serde_json::{json, Value};

/// Desk-scale benchmarks.
#[derive(Parser)]
struct Args {
    #[command(subcommand)]
    bench: Bench,
    /// Write the report document here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write raw samples as CSV here.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    #[arg(long, global = true, default_value = "loopback_tcp")]
    transport: Transport,
}

#[derive(Subcommand)]
enum Bench {
    /// Submit a batch of assignments back-to-back; report creation to
    /// processing latency.
    Surge {
        #[arg(long, default_value_t = 3)]
        clients: usize,
        #[arg(long, default_value_t = 100)]
        assignments: usize,
    },
    /// Full-iteration times with dummy clients. Without --tasks runs the
    /// 1, 5 and 10 task scenarios.
    Iters {
        #[arg(long, default_value_t = 100)]
        clients: usize,
        #[arg(long)]
        tasks: Option<usize>,
        /// Iterations per assignment; by default enough for the sample target.
        #[arg(long)]
        iterations: Option<u32>,
        /// 100,000 samples per scenario instead of 10,000.
        #[arg(long)]
        full: bool,
    },
    /// Values one builtin client processes in a sampling task.
    Throughput {
        #[arg(long, default_value_t = 5.0)]
        seconds: f64,
        #[arg(long, default_value = "double")]
        width: ValueWidth,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn emit(args: &Args, doc: Value, reports: &[&LatencyReport]) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(&doc)?;
    match &args.out {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    if let Some(p) = &args.csv {
        let mut csv = String::from("scenario,index,latency_ms\n");
        for (s, r) in reports.iter().enumerate() {
            for (i, v) in r.samples_ms.iter().enumerate() {
                csv.push_str(&format!("{s},{i},{v}\n"));
            }
        }
        std::fs::write(p, csv)?;
    }
    for r in reports {
        eprintln!("{}\n{}", r.scenario, r.summary_table());
    }
    Ok(())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    match &args.bench {
        Bench::Surge { clients, assignments } => {
            let mut d = LocalDeployment::start(DeploymentConfig::local(args.transport)).await?;
            d.add_clients(*clients, |i, id| ClientConfig {
                seed: i as u64,
                ..ClientConfig::new(id)
            })?;
            if !d.wait_for_clients(*clients, Duration::from_secs(30)).await || !d.ready(Duration::from_secs(30)).await {
                return Err("fleet did not come up".into());
            }
            let surge = run_surge(*assignments, &d).await;
            d.shutdown().await;
            let surge = surge?;
            let mut doc = serde_json::to_value(&surge)?;
            doc["slope_share_of_mean"] = json!(surge.trend_ratio);
            emit(&args, doc, &[&surge.report])?;
        }
        Bench::Iters {
            clients,
            tasks,
            iterations,
            full,
        } => {
            let target: u64 = if *full { 100_000 } else { 10_000 };
            let scenarios: Vec<usize> = match tasks {
                Some(t) => vec![*t],
                None => vec![1, 5, 10],
            };
            let mut results = Vec::new();
            for t in scenarios {
                let k = iterations.unwrap_or_else(|| target.div_ceil(t as u64) as u32);
                let spec = ScenarioSpec::dummy(*clients, t, k, args.transport);
                let r = run_iteration_bench(&spec).await?;
                eprintln!(
                    "tasks={t} received {}/{} results, {} timed-out iterations",
                    r.results_received, r.results_expected, r.timed_out_iterations
                );
                results.push(r);
            }
            let doc = serde_json::to_value(&results)?;
            let reports: Vec<&LatencyReport> = results.iter().map(|r| &r.report).collect();
            emit(&args, doc, &reports)?;
        }
        Bench::Throughput { seconds, width, seed } => {
            let r = run_throughput(Duration::from_secs_f64(*seconds), *width, *seed).await?;
            eprintln!(
                "{:.0} values/s, {:.3} GB/hour extrapolated",
                r.values_per_s,
                r.bytes_per_hour / 1e9
            );
            emit(&args, serde_json::to_value(&r)?, &[])?;
        }
    }
    Ok(())
}
