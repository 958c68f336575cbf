//! Desk-scale benchmark harness: simulated fleets, assignment surges,
//! iteration-time distributions and client throughput.

mod deployment;
mod iters;
mod report;
mod surge;
mod throughput;

pub use deployment::{DeploymentConfig, LocalDeployment, Transport};
pub use iters::{run_iteration_bench, ClientMode, IterationBench, ScenarioSpec};
pub use report::{linear_fit, percentile, trend_ratio, LatencyReport};
pub use surge::{run_surge, surge_assignment, SurgeReport};
pub use throughput::{run_throughput, ThroughputReport, ValueWidth};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no clients are connected")]
    FleetEmpty,
    #[error("benchmark made no progress for {0} s")]
    Timeout(u64),
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error("assignment {id} ended with {detail}")]
    Failed { id: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
