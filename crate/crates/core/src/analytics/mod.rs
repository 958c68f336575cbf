//! On-board and off-board computation kernels. Everything here is a pure
//! function over values.

mod anomaly;
mod federated;
mod histogram;
mod sampling;

use thiserror::Error;

pub use anomaly::{detect_anomalies, Observation};
pub use federated::{federated_average, gradient, half_mse, local_train, validation_error, ValidationSet};
pub use histogram::{average_histograms, histogram_map_reduce};
pub use sampling::sample_values;

use crate::protocol::{CollectedEntry, TaskResult};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("anomaly model scale must be positive, got {0}")]
    ZeroScale(f64),
    #[error("anomaly model has {coefficients} coefficients but observations carry {features} features")]
    FeatureMismatch { coefficients: usize, features: usize },
    #[error("histograms have different bin edges")]
    EdgeMismatch,
    #[error("every histogram is empty")]
    AllEmpty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no model has a positive sample count")]
    AllZeroCounts,
    #[error("training diverged to a non-finite weight")]
    DivergedToNonFinite,
    #[error("empty input")]
    EmptyInput,
}

/// Pairs each result body with the id of the client it came from, ordered
/// by client id.
pub fn collect(results: Vec<TaskResult>) -> Vec<CollectedEntry> {
    let mut entries: Vec<CollectedEntry> = results
        .into_iter()
        .map(|r| CollectedEntry {
            client_id: r.client_id,
            body: r.body,
        })
        .collect();
    entries.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    entries
}
