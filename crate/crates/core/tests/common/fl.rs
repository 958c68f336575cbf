use oodida::client::{ClientConfig, DataConfig, DataSource, SourceConfig};
use oodida::harness::{DeploymentConfig, LocalDeployment, Transport};
use oodida::protocol::{Aggregate, AssignmentId, DoneStatus, Message};
use serde_json::json;

use super::*;

pub const CLIENTS: u64 = 10;
pub const SAMPLES: usize = 100;

#[derive(Debug)]
pub struct FlOutcome {
    pub status: Option<DoneStatus>,
    pub rounds: u32,
    pub weights: Vec<f64>,
    pub oracle: Vec<f64>,
}

fn source() -> SourceConfig {
    SourceConfig::linear_pair(1.0, 2.0, 0.1)
}

/// Ordinary least squares for `y = a + b·x`, solved from the 2×2 normal
/// equations.
pub fn closed_form_ls(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    ((sxx * sy - sx * sxy) / det, (n * sxy - sx * sy) / det)
}

/// The data every client drew over `rounds` rounds, pooled.
pub fn pooled_data(rounds: u32) -> (Vec<f64>, Vec<f64>) {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let signals = vec!["x".to_string(), "y".to_string()];
    for seed in 0..CLIENTS {
        let mut src = DataSource::synthetic(source(), seed);
        for _ in 0..rounds {
            let batch = src.next_batch(&signals, SAMPLES).unwrap();
            xs.extend(batch[0].iter().map(|s| s.value));
            ys.extend(batch[1].iter().map(|s| s.value));
        }
    }
    (xs, ys)
}

pub async fn federated_run(transport: Transport) -> FlOutcome {
    let mut config = DeploymentConfig::local(transport);
    config.cloud = fast_cloud();
    let mut d = LocalDeployment::start(config).await.unwrap();
    for seed in 0..CLIENTS {
        d.add_client(ClientConfig {
            data: DataConfig::Synthetic(source()),
            ..fast_client(&format!("c{seed}"), seed)
        })
        .unwrap();
    }
    assert!(d.wait_for_clients(CLIENTS as usize, WAIT).await && d.ready(WAIT).await);

    let mut fe = d.frontend().await.unwrap();
    let id = AssignmentId::generate();
    fe.submit(json!({
        "assignment_id": id,
        "selection": "all",
        "plan": {"until_criterion": {"epsilon": 0.2, "max_rounds": 50}},
        "emit_intermediate": true,
        "onboard": {"kind": "train", "learning_rate": 0.5, "local_epochs": 50, "batch_window": SAMPLES},
        "offboard": {"kind": "federated_average", "validation": {"linear": {
            "weights": [1.0, 2.0], "noise_sd": 0.1, "samples": 500, "seed": 99
        }}},
        "signals": ["x", "y"],
        "samples_per_iteration": SAMPLES,
    }));
    let msgs = fe.wait_terminal(&id, std::time::Duration::from_secs(60)).await.unwrap_or_default();
    d.shutdown().await;

    let rounds = msgs.iter().filter(|m| matches!(m, Message::AssignmentUpdate { .. })).count() as u32;
    let (status, weights) = match msgs.last() {
        Some(Message::AssignmentDone {
            status,
            aggregate: Aggregate::Model { model, .. },
            ..
        }) => (Some(*status), model.weights.clone()),
        Some(Message::AssignmentDone { status, .. }) => (Some(*status), Vec::new()),
        _ => (None, Vec::new()),
    };
    let (xs, ys) = pooled_data(rounds.max(1));
    let (a, b) = closed_form_ls(&xs, &ys);
    FlOutcome {
        status,
        rounds,
        weights,
        oracle: vec![a, b],
    }
}
