#![allow(dead_code)]

pub mod fault;
pub mod fl;
pub mod gen;
pub mod oracles;

use std::time::Duration;

use oodida::client::{ClientConfig, ExecutorMode};
use oodida::config::CloudConfig;
use oodida::harness::{DeploymentConfig, LocalDeployment, Transport};
use oodida::protocol::{AssignmentId, Message};
use serde_json::{json, Value};

pub const WAIT: Duration = Duration::from_secs(20);

pub fn fast_cloud() -> CloudConfig {
    CloudConfig {
        user_listen: "127.0.0.1:0".into(),
        client_listen: "127.0.0.1:0".into(),
        iteration_timeout_ms: 10_000,
        grace_period_ms: 500,
        heartbeat_interval_ms: 100,
        heartbeat_misses: 3,
        ..CloudConfig::default()
    }
}

pub fn fast_client(id: &str, seed: u64) -> ClientConfig {
    ClientConfig {
        seed,
        heartbeat_interval: Duration::from_millis(100),
        reconnect_base: Duration::from_millis(20),
        reconnect_cap: Duration::from_millis(200),
        ..ClientConfig::new(id)
    }
}

pub fn dummy_client(id: &str) -> ClientConfig {
    ClientConfig {
        executor: ExecutorMode::Dummy,
        ..fast_client(id, 0)
    }
}

pub async fn deployment(transport: Transport, clients: usize) -> LocalDeployment {
    let mut config = DeploymentConfig::local(transport);
    config.cloud = fast_cloud();
    let mut d = LocalDeployment::start(config).await.expect("deployment starts");
    for i in 0..clients {
        d.add_client(fast_client(&format!("c{i}"), i as u64)).unwrap();
    }
    assert!(d.wait_for_clients(clients, WAIT).await, "clients registered");
    assert!(d.ready(WAIT).await, "user node linked");
    d
}

pub fn sample_doc(id: &AssignmentId, plan: Value, selection: Value) -> Value {
    json!({
        "assignment_id": id,
        "selection": selection,
        "plan": plan,
        "onboard": {"kind": "sample", "percent": 100.0},
        "offboard": {"kind": "collect"},
        "signals": ["velocity"],
        "samples_per_iteration": 5,
    })
}

pub fn terminal_count(msgs: &[Message]) -> usize {
    msgs.iter()
        .filter(|m| matches!(m, Message::AssignmentDone { .. } | Message::Error { .. }))
        .count()
}
