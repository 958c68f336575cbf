use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{DeploymentConfig, HarnessError, LatencyReport, LocalDeployment, Transport};
use crate::client::{ClientConfig, ExecutorMode};
use crate::events::{unix_micros, EventKind};
use crate::protocol::{AssignmentId, ComputationParams, Offboard, Onboard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientMode {
    /// Respond immediately with an empty body.
    Dummy,
    /// Run the real kernels on synthetic data.
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub clients: usize,
    pub mode: ClientMode,
    /// Concurrent assignments, each addressing every client.
    pub tasks_per_client: usize,
    pub iterations: u32,
    pub computation: ComputationParams,
    pub transport: Transport,
}

impl ScenarioSpec {
    pub fn dummy(clients: usize, tasks_per_client: usize, iterations: u32, transport: Transport) -> Self {
        Self {
            clients,
            mode: ClientMode::Dummy,
            tasks_per_client,
            iterations,
            computation: ComputationParams {
                onboard: Onboard::Sample { percent: 100.0 },
                offboard: Offboard::Collect,
                signals: vec!["velocity".into()],
                samples_per_iteration: 1,
            },
            transport,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.clients == 0 || self.tasks_per_client == 0 || self.iterations == 0 {
            return Err(HarnessError::BadScenario("counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Iteration samples the scenario produces.
    pub fn sample_count(&self) -> u64 {
        self.tasks_per_client as u64 * self.iterations as u64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationBench {
    pub report: LatencyReport,
    pub results_received: u64,
    pub results_expected: u64,
    pub timed_out_iterations: u64,
}

impl IterationBench {
    pub fn lossless(&self) -> bool {
        self.results_received == self.results_expected && self.timed_out_iterations == 0
    }
}

const WATCHDOG: Duration = Duration::from_secs(30);

/// Brings up a fresh deployment, runs the scenario to completion and reports
/// the distribution of full-iteration times.
pub async fn run_iteration_bench(scenario: &ScenarioSpec) -> Result<IterationBench, HarnessError> {
    scenario.validate()?;
    let mut deployment = LocalDeployment::start(DeploymentConfig::local(scenario.transport)).await?;
    let mode = match scenario.mode {
        ClientMode::Dummy => ExecutorMode::Dummy,
        ClientMode::Builtin => ExecutorMode::Builtin,
    };
    deployment
        .add_clients(scenario.clients, |i, id| ClientConfig {
            seed: i as u64,
            executor: mode.clone(),
            ..ClientConfig::new(id)
        })
        .map_err(|e| HarnessError::BadScenario(e.to_string()))?;
    let result = drive(&deployment, scenario).await;
    deployment.shutdown().await;
    result
}

async fn drive(deployment: &LocalDeployment, scenario: &ScenarioSpec) -> Result<IterationBench, HarnessError> {
    if !deployment.wait_for_clients(scenario.clients, WATCHDOG).await || !deployment.ready(WATCHDOG).await {
        return Err(HarnessError::FleetEmpty);
    }
    let mut events = deployment.events().subscribe();
    let frontend = deployment.frontend().await?;

    let mut ids = HashSet::new();
    for _ in 0..scenario.tasks_per_client {
        let id = AssignmentId::generate();
        let mut doc = serde_json::to_value(&scenario.computation).expect("computation serializes");
        let extra = json!({
            "assignment_id": id,
            "selection": "all",
            "plan": {"finite": scenario.iterations},
            "submitted_by": "bench",
            "created_at_us": unix_micros(),
        });
        if let (Some(d), Some(e)) = (doc.as_object_mut(), extra.as_object()) {
            d.extend(e.clone());
        }
        ids.insert(id);
        frontend.submit(doc);
    }

    let mut samples = Vec::with_capacity(scenario.sample_count() as usize);
    let mut received = 0u64;
    let mut timed_out = 0u64;
    let mut open = ids.clone();
    while !open.is_empty() {
        let ev = tokio::time::timeout(WATCHDOG, events.recv())
            .await
            .map_err(|_| HarnessError::Timeout(WATCHDOG.as_secs()))?
            .ok_or(HarnessError::Timeout(0))?;
        match ev.kind {
            EventKind::IterationCompleted {
                assignment_id,
                contributors,
                elapsed_us,
                timed_out: t,
                ..
            } if ids.contains(&assignment_id) => {
                samples.push(elapsed_us as f64 / 1000.0);
                received += contributors.len() as u64;
                timed_out += t as u64;
            }
            EventKind::AssignmentDone { assignment_id, .. } => {
                open.remove(&assignment_id);
            }
            _ => {}
        }
    }
    frontend.close();

    let report = LatencyReport::from_samples(samples, serde_json::to_value(scenario).unwrap_or_default());
    Ok(IterationBench {
        report,
        results_received: received,
        results_expected: (scenario.clients * scenario.tasks_per_client) as u64 * scenario.iterations as u64,
        timed_out_iterations: timed_out,
    })
}
