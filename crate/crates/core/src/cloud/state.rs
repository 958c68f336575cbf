//! Per-assignment state machine and off-board aggregation, free of I/O so
//! the handler logic can be tested step by step.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::registry::ClientLink;
use crate::analytics::{self, AnalyticsError, ValidationSet};
use crate::protocol::{
    Aggregate, AssignmentSpec, ClientId, ClientSelection, Histogram, IterationPlan, ModelParams, Offboard,
    ResultBody, TaskResult, TaskSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentStatus {
    Running,
    AwaitingResults,
    Done,
    Cancelled,
    Dropped,
}

/// What happened to an incoming result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accept {
    Accepted,
    /// Belongs to an earlier iteration.
    Stale,
    /// Sender is not addressed in this iteration.
    Foreign,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("client {client} returned a {got} body for a {expected} assignment")]
    BodyMismatch {
        client: ClientId,
        expected: &'static str,
        got: &'static str,
    },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

#[derive(Debug)]
pub struct AssignmentState {
    pub spec: AssignmentSpec,
    pub addressed: BTreeMap<ClientId, ClientLink>,
    pub received: BTreeMap<ClientId, TaskResult>,
    /// Addressed clients that will not answer this iteration.
    pub excluded: BTreeSet<ClientId>,
    pub iteration: u32,
    pub completed_iterations: u32,
    /// Current global model, present iff the off-board kind is federated averaging.
    pub carry: Option<ModelParams>,
    pub status: AssignmentStatus,
    pub last_aggregate: Aggregate,
    pub validation: Option<ValidationSet>,
}

impl AssignmentState {
    pub fn new(spec: AssignmentSpec) -> Self {
        let (carry, validation) = match &spec.computation.offboard {
            Offboard::FederatedAverage {
                validation,
                initial_weights,
            } => {
                let dim = spec.computation.signals.len();
                let carry = match initial_weights {
                    Some(w) => ModelParams {
                        weights: w.clone(),
                        sample_count: 0,
                    },
                    None => ModelParams::zeros(dim),
                };
                (Some(carry), validation.as_ref().map(ValidationSet::from_ref))
            }
            _ => (None, None),
        };
        Self {
            spec,
            addressed: BTreeMap::new(),
            received: BTreeMap::new(),
            excluded: BTreeSet::new(),
            iteration: 0,
            completed_iterations: 0,
            carry,
            status: AssignmentStatus::Running,
            last_aggregate: Aggregate::Empty,
            validation,
        }
    }

    pub fn start_iteration(&mut self, links: Vec<ClientLink>) {
        self.addressed = links.into_iter().map(|l| (l.client_id.clone(), l)).collect();
        self.received.clear();
        self.excluded.clear();
        self.status = AssignmentStatus::AwaitingResults;
    }

    pub fn task(&self, time_limit_ms: Option<u64>) -> TaskSpec {
        TaskSpec {
            assignment_id: self.spec.assignment_id.clone(),
            iteration: self.iteration,
            computation: self.spec.computation.clone(),
            payload: self.carry.clone(),
            time_limit_ms,
        }
    }

    pub fn accept(&mut self, result: TaskResult) -> Accept {
        if result.iteration != self.iteration {
            return Accept::Stale;
        }
        if !self.addressed.contains_key(&result.client_id) {
            return Accept::Foreign;
        }
        if self.received.contains_key(&result.client_id) || self.excluded.contains(&result.client_id) {
            return Accept::Duplicate;
        }
        self.received.insert(result.client_id.clone(), result);
        Accept::Accepted
    }

    pub fn exclude(&mut self, client: &ClientId) {
        if self.addressed.contains_key(client) && !self.received.contains_key(client) {
            self.excluded.insert(client.clone());
        }
    }

    /// Whether a client that (re)connected mid-iteration should take part
    /// in the current iteration. Returns false once it has answered.
    pub fn wants(&self, client: &ClientId) -> bool {
        if self.received.contains_key(client) {
            return false;
        }
        if self.addressed.contains_key(client) {
            return true;
        }
        match &self.spec.selection {
            ClientSelection::All => true,
            ClientSelection::Ids(ids) => ids.contains(client),
            ClientSelection::Count(n) => self.addressed.len() < *n as usize,
        }
    }

    /// Adds or replaces the link of a client joining this iteration.
    pub fn join(&mut self, link: ClientLink) {
        self.excluded.remove(&link.client_id);
        self.addressed.insert(link.client_id.clone(), link);
    }

    pub fn pending(&self) -> usize {
        self.addressed
            .keys()
            .filter(|c| !self.received.contains_key(*c) && !self.excluded.contains(*c))
            .count()
    }

    pub fn iteration_complete(&self) -> bool {
        !self.addressed.is_empty() && self.pending() == 0
    }

    pub fn contributors(&self) -> Vec<ClientId> {
        self.received.keys().cloned().collect()
    }

    /// Applies the off-board computation to the received results and
    /// advances the carry state.
    pub fn aggregate(&mut self) -> Result<Aggregate, AggregationError> {
        let results: Vec<TaskResult> = std::mem::take(&mut self.received).into_values().collect();
        let aggregate = aggregate(
            &self.spec.computation.offboard,
            self.spec.computation.onboard.kind().as_str(),
            self.carry.as_ref(),
            self.validation.as_ref(),
            results,
        )?;
        if let Aggregate::Model { model, .. } = &aggregate {
            self.carry = Some(model.clone());
        }
        Ok(aggregate)
    }

    /// Records a finished iteration and reports whether the plan is done.
    pub fn finish_iteration(&mut self, aggregate: Aggregate) -> bool {
        self.completed_iterations += 1;
        self.status = AssignmentStatus::Running;
        let done = match self.spec.plan {
            IterationPlan::Finite(k) => self.completed_iterations >= k,
            IterationPlan::UntilCriterion { epsilon, max_rounds } => {
                let met = matches!(&aggregate, Aggregate::Model { validation_error: Some(e), .. } if *e <= epsilon);
                met || self.completed_iterations >= max_rounds
            }
            IterationPlan::UntilCancelled => false,
        };
        self.last_aggregate = aggregate;
        if !done {
            self.iteration += 1;
        }
        done
    }
}

fn body_kind_name(b: &ResultBody) -> &'static str {
    b.kind().as_str()
}

/// Off-board computation over one iteration's results. Zero results yield
/// [`Aggregate::Empty`].
pub fn aggregate(
    offboard: &Offboard,
    onboard_kind: &'static str,
    carry: Option<&ModelParams>,
    validation: Option<&ValidationSet>,
    results: Vec<TaskResult>,
) -> Result<Aggregate, AggregationError> {
    if results.is_empty() {
        return Ok(Aggregate::Empty);
    }
    if let Some(bad) = results.iter().find(|r| body_kind_name(&r.body) != onboard_kind) {
        return Err(AggregationError::BodyMismatch {
            client: bad.client_id.clone(),
            expected: onboard_kind,
            got: body_kind_name(&bad.body),
        });
    }
    match offboard {
        Offboard::Collect => Ok(Aggregate::Collected {
            entries: analytics::collect(results),
        }),
        Offboard::AverageHistograms => {
            let contributors = results.len() as u32;
            let hists: Vec<Histogram> = results
                .into_iter()
                .filter_map(|r| match r.body {
                    ResultBody::Histogram { histogram } => Some(histogram),
                    _ => None,
                })
                .collect();
            let histogram = match analytics::average_histograms(&hists) {
                Ok(h) => h,
                Err(AnalyticsError::AllEmpty) => Histogram {
                    edges: hists[0].edges.clone(),
                    mass: vec![0.0; hists[0].mass.len()],
                    empty: true,
                },
                Err(e) => return Err(e.into()),
            };
            Ok(Aggregate::Histogram { histogram, contributors })
        }
        Offboard::FederatedAverage { .. } => {
            let models: Vec<ModelParams> = results
                .into_iter()
                .filter_map(|r| match r.body {
                    ResultBody::Train { model } => Some(model),
                    _ => None,
                })
                .collect();
            if let Some(global) = carry {
                if let Some(m) = models.iter().find(|m| m.weights.len() != global.weights.len()) {
                    return Err(AnalyticsError::DimensionMismatch {
                        expected: global.weights.len(),
                        got: m.weights.len(),
                    }
                    .into());
                }
            }
            let model = match analytics::federated_average(&models) {
                Ok(m) => m,
                Err(AnalyticsError::AllZeroCounts) => return Ok(Aggregate::Empty),
                Err(e) => return Err(e.into()),
            };
            let validation_error = match validation {
                Some(v) => Some(analytics::validation_error(&model, v)?),
                None => None,
            };
            Ok(Aggregate::Model { model, validation_error })
        }
    }
}
