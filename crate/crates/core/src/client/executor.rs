//! Turns a task into a result body: built-in kernels, dummy responses for
//! benchmarks, or an external child process.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::external::run_external;
use super::source::{fnv1a, splitmix, SignalSample, SourceError, SourceHandle};
use crate::analytics::{self, AnalyticsError, Observation};
use crate::protocol::{ClientId, Histogram, ModelParams, Onboard, ResultBody, TaskSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorMode {
    Builtin,
    /// Answers every task immediately with an empty body of the right kind.
    Dummy,
    /// Runs `sh -c <command>` once per task.
    External { command: String },
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("task is not executable: {0}")]
    BadTask(String),
    #[error("external executor could not start: {0}")]
    Spawn(String),
    #[error("external executor crashed: {0}")]
    ChildCrashed(String),
    #[error("external executor exceeded its {0} ms limit")]
    ChildTimeout(u64),
    #[error("external executor produced an invalid result: {0}")]
    MalformedChildOutput(String),
}

/// Document handed to an external executor: the task plus the samples it
/// covers, one series per signal in the task's signal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalTask {
    pub client_id: ClientId,
    pub seed: u64,
    pub task: TaskSpec,
    pub samples: Vec<Vec<SignalSample>>,
}

/// Seed for randomized on-board kernels. Depends on the agent seed and the
/// assignment, never on the iteration.
pub fn task_seed(agent_seed: u64, task: &TaskSpec) -> u64 {
    splitmix(agent_seed ^ fnv1a(task.assignment_id.as_str()))
}

fn series(samples: &[SignalSample]) -> Vec<f64> {
    samples.iter().map(|s| s.value).collect()
}

/// The built-in on-board computation over already drawn samples.
pub fn compute(
    client_id: &ClientId,
    seed: u64,
    task: &TaskSpec,
    samples: &[Vec<SignalSample>],
) -> Result<ResultBody, ExecutorError> {
    let c = &task.computation;
    if samples.len() != c.signals.len() {
        return Err(ExecutorError::BadTask(format!(
            "{} sample series for {} signals",
            samples.len(),
            c.signals.len()
        )));
    }
    match &c.onboard {
        Onboard::Sample { percent } => {
            let values = c
                .signals
                .iter()
                .zip(samples)
                .map(|(name, s)| (name.clone(), analytics::sample_values(&series(s), *percent, seed ^ fnv1a(name))))
                .collect();
            Ok(ResultBody::Sample { values })
        }
        Onboard::Anomaly {
            coefficients,
            threshold,
        } => {
            let observations: Vec<Observation> = (0..samples[0].len())
                .map(|i| Observation {
                    timestamp: samples[0][i].timestamp,
                    value: samples[0][i].value,
                    features: samples[1..].iter().map(|s| s[i].value).collect(),
                })
                .collect();
            let records = analytics::detect_anomalies(client_id, &c.signals[0], &observations, coefficients, *threshold)?;
            Ok(ResultBody::Anomaly { records })
        }
        Onboard::Histogram { edges } => Ok(ResultBody::Histogram {
            histogram: analytics::histogram_map_reduce(&series(&samples[0]), edges),
        }),
        Onboard::Train {
            learning_rate,
            local_epochs,
            batch_window,
        } => {
            let (target, inputs) = samples
                .split_last()
                .ok_or_else(|| ExecutorError::BadTask("train needs signals".into()))?;
            let n = target.len();
            let start = n.saturating_sub(*batch_window as usize);
            let features: Vec<Vec<f64>> = (start..n).map(|i| inputs.iter().map(|s| s[i].value).collect()).collect();
            let targets: Vec<f64> = target[start..].iter().map(|s| s.value).collect();
            let model = task
                .payload
                .clone()
                .unwrap_or_else(|| ModelParams::zeros(c.signals.len()));
            let model = analytics::local_train(&model, &features, &targets, *learning_rate, *local_epochs)?;
            Ok(ResultBody::Train { model })
        }
    }
}

/// An empty body of the task's kind.
pub fn dummy_body(task: &TaskSpec) -> ResultBody {
    match &task.computation.onboard {
        Onboard::Sample { .. } => ResultBody::Sample { values: BTreeMap::new() },
        Onboard::Anomaly { .. } => ResultBody::Anomaly { records: Vec::new() },
        Onboard::Histogram { edges } => ResultBody::Histogram {
            histogram: Histogram {
                edges: edges.clone(),
                mass: vec![0.0; edges.len().saturating_sub(1)],
                empty: true,
            },
        },
        Onboard::Train { .. } => ResultBody::Train {
            model: ModelParams {
                weights: task
                    .payload
                    .as_ref()
                    .map(|m| m.weights.clone())
                    .unwrap_or_else(|| vec![0.0; task.computation.signals.len()]),
                sample_count: 0,
            },
        },
    }
}

/// Executes tasks for one agent.
#[derive(Clone)]
pub struct Executor {
    pub mode: ExecutorMode,
    pub client_id: ClientId,
    pub seed: u64,
    pub source: SourceHandle,
    /// Extra delay before every task, for tests and benchmarks.
    pub simulated_latency: Option<Duration>,
}

impl Executor {
    pub async fn execute(&self, task: &TaskSpec) -> Result<ResultBody, ExecutorError> {
        if let Some(d) = self.simulated_latency {
            tokio::time::sleep(d).await;
        }
        if self.mode == ExecutorMode::Dummy {
            return Ok(dummy_body(task));
        }
        let c = &task.computation;
        let samples = self.source.batch(&c.signals, c.samples_per_iteration as usize).await?;
        let seed = task_seed(self.seed, task);
        match &self.mode {
            ExecutorMode::External { command } => {
                let doc = ExternalTask {
                    client_id: self.client_id.clone(),
                    seed,
                    task: task.clone(),
                    samples,
                };
                let limit = task.time_limit_ms.map(Duration::from_millis);
                run_external(command, &doc, limit).await
            }
            _ => compute(&self.client_id, seed, task, &samples),
        }
    }
}
