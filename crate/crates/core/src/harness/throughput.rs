use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::client::{DataSource, Executor, ExecutorMode, SourceConfig, SourceHandle};
use crate::protocol::{AssignmentId, ComputationParams, Offboard, Onboard, ResultBody, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueWidth {
    Single,
    Double,
}

impl ValueWidth {
    pub fn bytes(self) -> usize {
        match self {
            ValueWidth::Single => 4,
            ValueWidth::Double => 8,
        }
    }
}

impl std::str::FromStr for ValueWidth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" | "f32" => Ok(ValueWidth::Single),
            "double" | "f64" => Ok(ValueWidth::Double),
            _ => Err(format!("unknown value width {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThroughputReport {
    pub width: ValueWidth,
    pub duration_s: f64,
    pub values: u64,
    pub values_per_s: f64,
    pub bytes_per_hour: f64,
    pub tasks: u64,
}

/// Values per sampling task.
const CHUNK: u32 = 10_000;

/// Runs full-rate sampling tasks on one builtin executor for `duration` and
/// counts the values it processes. Each retained value is packed at the
/// requested width, as a client would before shipping it.
pub async fn run_throughput(duration: Duration, width: ValueWidth, seed: u64) -> Result<ThroughputReport, HarnessError> {
    let executor = Executor {
        mode: ExecutorMode::Builtin,
        client_id: "throughput".into(),
        seed,
        source: SourceHandle::spawn(DataSource::synthetic(SourceConfig::default(), seed)),
        simulated_latency: None,
    };
    let task = TaskSpec {
        assignment_id: AssignmentId::new("7e57"),
        iteration: 0,
        computation: ComputationParams {
            onboard: Onboard::Sample { percent: 100.0 },
            offboard: Offboard::Collect,
            signals: vec!["velocity".into()],
            samples_per_iteration: CHUNK,
        },
        payload: None,
        time_limit_ms: None,
    };

    let mut packed = Vec::with_capacity(CHUNK as usize * width.bytes());
    let (mut values, mut tasks) = (0u64, 0u64);
    let start = Instant::now();
    while start.elapsed() < duration {
        let body = executor
            .execute(&task)
            .await
            .map_err(|e| HarnessError::Failed { id: task.assignment_id.to_string(), detail: e.to_string() })?;
        if let ResultBody::Sample { values: v } = body {
            packed.clear();
            for x in v.values().flatten() {
                match width {
                    ValueWidth::Single => packed.extend_from_slice(&(*x as f32).to_le_bytes()),
                    ValueWidth::Double => packed.extend_from_slice(&x.to_le_bytes()),
                }
            }
            values += (packed.len() / width.bytes()) as u64;
        }
        tasks += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let rate = values as f64 / secs;
    Ok(ThroughputReport {
        width,
        duration_s: secs,
        values,
        values_per_s: rate,
        bytes_per_hour: rate * 3600.0 * width.bytes() as f64,
        tasks,
    })
}
