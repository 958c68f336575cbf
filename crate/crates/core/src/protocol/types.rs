use std::collections::BTreeMap;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Static identifier of a client device. Connection handles change across
/// reconnects, the id does not.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(String);

impl ClientId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClientId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Opaque assignment token: 128 random bits, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssignmentId(String);

impl AssignmentId {
    pub fn generate() -> Self {
        let mut bytes = [0u8; 16];
        rand::rng().fill_bytes(&mut bytes);
        Self(hex::encode(bytes))
    }

    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Nonempty, at most 64 characters, hex digits only.
    pub fn is_well_formed(&self) -> bool {
        !self.0.is_empty() && self.0.len() <= 64 && self.0.bytes().all(|b| b.is_ascii_hexdigit())
    }
}

impl fmt::Display for AssignmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientSelection {
    All,
    Count(u32),
    Ids(Vec<ClientId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationPlan {
    Finite(u32),
    UntilCriterion {
        epsilon: f64,
        #[serde(default = "default_max_rounds")]
        max_rounds: u32,
    },
    UntilCancelled,
}

/// On-board computation executed by each addressed client.
pub const DEFAULT_MAX_ROUNDS: u32 = 100;

fn default_max_rounds() -> u32 {
    DEFAULT_MAX_ROUNDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Onboard {
    /// Retain each value with probability `percent / 100`.
    Sample { percent: f64 },
    /// Linear model `[offset, feature weights.., scale]` and score threshold.
    Anomaly { coefficients: Vec<f64>, threshold: f64 },
    Histogram { edges: Vec<f64> },
    /// Local gradient descent on a linear model. Features are all signals
    /// but the last, the target is the last signal.
    Train {
        learning_rate: f64,
        local_epochs: u32,
        batch_window: u32,
    },
}

impl Onboard {
    pub fn kind(&self) -> OnboardKind {
        match self {
            Onboard::Sample { .. } => OnboardKind::Sample,
            Onboard::Anomaly { .. } => OnboardKind::Anomaly,
            Onboard::Histogram { .. } => OnboardKind::Histogram,
            Onboard::Train { .. } => OnboardKind::Train,
        }
    }
}

/// Off-board computation applied by the assignment handler to each
/// iteration's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Offboard {
    Collect,
    AverageHistograms,
    FederatedAverage {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        validation: Option<ValidationRef>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_weights: Option<Vec<f64>>,
    },
}

impl Offboard {
    pub fn kind(&self) -> OffboardKind {
        match self {
            Offboard::Collect => OffboardKind::Collect,
            Offboard::AverageHistograms => OffboardKind::AverageHistograms,
            Offboard::FederatedAverage { .. } => OffboardKind::FederatedAverage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OnboardKind {
    Sample,
    Anomaly,
    Histogram,
    Train,
}

impl OnboardKind {
    pub const ALL: [OnboardKind; 4] = [Self::Sample, Self::Anomaly, Self::Histogram, Self::Train];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sample => "sample",
            Self::Anomaly => "anomaly",
            Self::Histogram => "histogram",
            Self::Train => "train",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OffboardKind {
    Collect,
    AverageHistograms,
    FederatedAverage,
}

impl OffboardKind {
    pub const ALL: [OffboardKind; 3] = [Self::Collect, Self::AverageHistograms, Self::FederatedAverage];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Collect => "collect",
            Self::AverageHistograms => "average_histograms",
            Self::FederatedAverage => "federated_average",
        }
    }
}

/// The closed table of on-board/off-board pairings.
pub fn kinds_compatible(onboard: OnboardKind, offboard: OffboardKind) -> bool {
    use OffboardKind as F;
    use OnboardKind as N;
    matches!(
        (onboard, offboard),
        (N::Sample, F::Collect)
            | (N::Anomaly, F::Collect)
            | (N::Histogram, F::Collect)
            | (N::Histogram, F::AverageHistograms)
            | (N::Train, F::FederatedAverage)
    )
}

/// Where the cloud finds the validation set used to score global models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationRef {
    Inline { features: Vec<Vec<f64>>, targets: Vec<f64> },
    /// `targets = weights[0] + Σ weights[i+1]·x_i + N(0, noise_sd)` with
    /// standard normal features, generated from `seed`.
    Linear {
        weights: Vec<f64>,
        noise_sd: f64,
        samples: u32,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputationParams {
    pub onboard: Onboard,
    pub offboard: Offboard,
    pub signals: Vec<String>,
    pub samples_per_iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSpec {
    pub assignment_id: AssignmentId,
    pub selection: ClientSelection,
    pub plan: IterationPlan,
    #[serde(default)]
    pub emit_intermediate: bool,
    #[serde(flatten)]
    pub computation: ComputationParams,
    #[serde(default)]
    pub submitted_by: String,
    /// Per-assignment override of the cloud's iteration result timeout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration_timeout_ms: Option<u64>,
    /// Unix microseconds at which the front-end created the assignment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<f64>,
    pub sample_count: u64,
}

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            sample_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub assignment_id: AssignmentId,
    /// Informational only; clients behave identically for any value.
    pub iteration: u32,
    pub computation: ComputationParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    #[serde(default)]
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub client_id: ClientId,
    pub signal: String,
    pub value: f64,
    pub score: f64,
    pub timestamp: f64,
}

/// Body of a task result, tagged with the on-board kind that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResultBody {
    Sample { values: BTreeMap<String, Vec<f64>> },
    Anomaly { records: Vec<AnomalyRecord> },
    Histogram { histogram: Histogram },
    Train { model: ModelParams },
}

impl ResultBody {
    pub fn kind(&self) -> OnboardKind {
        match self {
            ResultBody::Sample { .. } => OnboardKind::Sample,
            ResultBody::Anomaly { .. } => OnboardKind::Anomaly,
            ResultBody::Histogram { .. } => OnboardKind::Histogram,
            ResultBody::Train { .. } => OnboardKind::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub assignment_id: AssignmentId,
    pub iteration: u32,
    pub client_id: ClientId,
    pub body: ResultBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectedEntry {
    pub client_id: ClientId,
    pub body: ResultBody,
}

/// Off-board output of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregate {
    Empty,
    Collected {
        entries: Vec<CollectedEntry>,
    },
    Histogram {
        histogram: Histogram,
        contributors: u32,
    },
    Model {
        model: ModelParams,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        validation_error: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneStatus {
    Completed,
    Cancelled,
    Dropped,
}

impl fmt::Display for DoneStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DoneStatus::Completed => "completed",
            DoneStatus::Cancelled => "cancelled",
            DoneStatus::Dropped => "dropped",
        })
    }
}

/// Lifecycle of an assignment as seen by the user node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendingStatus {
    Sent,
    Running,
    Completed,
    Cancelled,
    Dropped,
    Error,
}

impl PendingStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, PendingStatus::Sent | PendingStatus::Running)
    }
}

impl From<DoneStatus> for PendingStatus {
    fn from(s: DoneStatus) -> Self {
        match s {
            DoneStatus::Completed => PendingStatus::Completed,
            DoneStatus::Cancelled => PendingStatus::Cancelled,
            DoneStatus::Dropped => PendingStatus::Dropped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingAssignment {
    pub assignment_id: AssignmentId,
    pub submitted_at_us: u64,
    pub status: PendingStatus,
    pub updates_seen: u32,
}
