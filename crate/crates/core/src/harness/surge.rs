use std::collections::{HashMap, HashSet};
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};

use super::{trend_ratio, HarnessError, LatencyReport, LocalDeployment};
use crate::events::{unix_micros, EventKind};
use crate::protocol::{AssignmentId, Message};

#[derive(Debug, Clone, Serialize)]
pub struct SurgeReport {
    pub report: LatencyReport,
    /// Rise of the fitted per-index line over the batch, relative to the mean.
    pub trend_ratio: f64,
    pub completed: usize,
}

/// A one-iteration sampling assignment for the whole fleet.
pub fn surge_assignment(id: &AssignmentId) -> Value {
    json!({
        "assignment_id": id,
        "selection": "all",
        "plan": {"finite": 1},
        "onboard": {"kind": "sample", "percent": 100.0},
        "offboard": {"kind": "collect"},
        "signals": ["velocity"],
        "samples_per_iteration": 10,
        "submitted_by": "surge",
        "created_at_us": unix_micros(),
    })
}

/// Submits `n` assignments back-to-back and measures, per assignment, the
/// time from creation to its handler being spawned in the cloud.
pub async fn run_surge(n: usize, deployment: &LocalDeployment) -> Result<SurgeReport, HarnessError> {
    if deployment.cloud().connected_clients().await.is_empty() {
        return Err(HarnessError::FleetEmpty);
    }
    let mut events = deployment.events().subscribe();
    let mut frontend = deployment.frontend().await?;

    let mut created = HashMap::new();
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let id = AssignmentId::generate();
        let doc = surge_assignment(&id);
        created.insert(id.clone(), doc["created_at_us"].as_u64().unwrap_or(0));
        order.push(id);
        frontend.submit(doc);
    }

    let idle = Duration::from_secs(30);
    let mut spawned: HashMap<AssignmentId, u64> = HashMap::new();
    while spawned.len() < n {
        let ev = tokio::time::timeout(idle, events.recv())
            .await
            .map_err(|_| HarnessError::Timeout(idle.as_secs()))?
            .ok_or(HarnessError::Timeout(0))?;
        if let EventKind::HandlerSpawned { assignment_id, .. } = ev.kind {
            if let Some(c) = created.get(&assignment_id) {
                spawned.insert(assignment_id, ev.ts_us.saturating_sub(*c));
            }
        }
    }

    let mut pending: HashSet<AssignmentId> = order.iter().cloned().collect();
    while !pending.is_empty() {
        let m = frontend.recv_timeout(idle).await.ok_or(HarnessError::Timeout(idle.as_secs()))?;
        match m {
            Message::AssignmentDone { assignment_id, .. } => {
                pending.remove(&assignment_id);
            }
            Message::Error {
                assignment_id: Some(id),
                detail,
                ..
            } if pending.contains(&id) => {
                return Err(HarnessError::Failed { id: id.to_string(), detail });
            }
            _ => {}
        }
    }
    frontend.close();

    let samples: Vec<f64> = order.iter().map(|id| spawned[id] as f64 / 1000.0).collect();
    let trend = trend_ratio(&samples);
    let report = LatencyReport::from_samples(
        samples,
        json!({"bench": "surge", "assignments": n, "transport": deployment.transport()}),
    );
    Ok(SurgeReport {
        report,
        trend_ratio: trend,
        completed: n,
    })
}
