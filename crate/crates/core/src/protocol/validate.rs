//! Assignment document validation.
//!
//! Validation runs in two passes. The structural pass decodes each
//! top-level field on its own so that one bad field does not hide the
//! others. The semantic pass checks the invariants of the decoded values.

use std::collections::HashSet;
use std::fmt;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};
use thiserror::Error;

use super::types::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Dotted path of the offending field, `$` for the whole document.
    pub path: String,
    pub rule: String,
}

impl Violation {
    fn new(path: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("assignment rejected: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct ValidationFailed(pub Vec<Violation>);

impl ValidationFailed {
    pub fn violations(&self) -> &[Violation] {
        &self.0
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.0.iter().any(|v| v.rule.contains(needle) || v.path.contains(needle))
    }
}

/// Parses and fully checks an assignment document.
pub fn validate_assignment(document: &str) -> Result<AssignmentSpec, ValidationFailed> {
    match serde_json::from_str::<Value>(document) {
        Ok(doc) => validate_value(&doc),
        Err(e) => Err(ValidationFailed(vec![Violation::new("$", format!("not a valid JSON document: {e}"))])),
    }
}

pub fn validate_value(doc: &Value) -> Result<AssignmentSpec, ValidationFailed> {
    let Some(obj) = doc.as_object() else {
        return Err(ValidationFailed(vec![Violation::new("$", "document must be an object")]));
    };
    let mut violations = Vec::new();

    let assignment_id = field::<AssignmentId>(obj, "assignment_id", true, &mut violations);
    let selection = field::<ClientSelection>(obj, "selection", true, &mut violations);
    let plan = field::<IterationPlan>(obj, "plan", true, &mut violations);
    let emit_intermediate = field::<bool>(obj, "emit_intermediate", false, &mut violations);
    let onboard = field::<Onboard>(obj, "onboard", true, &mut violations);
    let offboard = field::<Offboard>(obj, "offboard", true, &mut violations);
    let signals = field::<Vec<String>>(obj, "signals", true, &mut violations);
    let samples = field::<u32>(obj, "samples_per_iteration", true, &mut violations);
    let submitted_by = field::<String>(obj, "submitted_by", false, &mut violations);
    let timeout = field::<u64>(obj, "iteration_timeout_ms", false, &mut violations);
    let created = field::<u64>(obj, "created_at_us", false, &mut violations);

    let (Some(assignment_id), Some(selection), Some(plan), Some(onboard), Some(offboard), Some(signals), Some(samples)) =
        (assignment_id, selection, plan, onboard, offboard, signals, samples)
    else {
        return Err(ValidationFailed(violations));
    };
    if !violations.is_empty() {
        return Err(ValidationFailed(violations));
    }

    let spec = AssignmentSpec {
        assignment_id,
        selection,
        plan,
        emit_intermediate: emit_intermediate.unwrap_or(false),
        computation: ComputationParams {
            onboard,
            offboard,
            signals,
            samples_per_iteration: samples,
        },
        submitted_by: submitted_by.unwrap_or_default(),
        iteration_timeout_ms: timeout,
        created_at_us: created,
    };
    let violations = check_spec(&spec);
    if violations.is_empty() {
        Ok(spec)
    } else {
        Err(ValidationFailed(violations))
    }
}

fn field<T: DeserializeOwned>(
    obj: &Map<String, Value>,
    key: &str,
    required: bool,
    violations: &mut Vec<Violation>,
) -> Option<T> {
    match obj.get(key) {
        None | Some(Value::Null) => {
            if required {
                violations.push(Violation::new(key, "required field is missing"));
            }
            None
        }
        Some(v) => match T::deserialize(v) {
            Ok(t) => Some(t),
            Err(e) => {
                violations.push(Violation::new(key, format!("does not match the grammar: {e}")));
                None
            }
        },
    }
}

/// Semantic invariants of a decoded assignment.
pub fn check_spec(spec: &AssignmentSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if !spec.assignment_id.is_well_formed() {
        out.push(Violation::new("assignment_id", "must be a nonempty hex string of at most 64 digits"));
    }
    check_selection(&spec.selection, &mut out);
    check_plan(&spec.plan, &mut out);
    check_computation(&spec.computation, &mut out);
    if let IterationPlan::UntilCriterion { .. } = spec.plan {
        let has_validation = matches!(
            spec.computation.offboard,
            Offboard::FederatedAverage { validation: Some(_), .. }
        );
        if !has_validation {
            out.push(Violation::new(
                "plan.until_criterion",
                "requires offboard federated_average with a validation set",
            ));
        }
    }
    if spec.iteration_timeout_ms == Some(0) {
        out.push(Violation::new("iteration_timeout_ms", "must be positive"));
    }
    out
}

fn check_selection(selection: &ClientSelection, out: &mut Vec<Violation>) {
    match selection {
        ClientSelection::All => {}
        ClientSelection::Count(n) => {
            if *n == 0 {
                out.push(Violation::new("selection.count", "must be at least 1"));
            }
        }
        ClientSelection::Ids(ids) => {
            if ids.is_empty() {
                out.push(Violation::new("selection.ids", "must be nonempty"));
            }
            let mut seen = HashSet::new();
            for (i, id) in ids.iter().enumerate() {
                if id.as_str().is_empty() {
                    out.push(Violation::new(format!("selection.ids[{i}]"), "client id must be nonempty"));
                }
                if !seen.insert(id) {
                    out.push(Violation::new(format!("selection.ids[{i}]"), "duplicate client id"));
                }
            }
        }
    }
}

fn check_plan(plan: &IterationPlan, out: &mut Vec<Violation>) {
    match plan {
        IterationPlan::Finite(k) => {
            if *k == 0 {
                out.push(Violation::new("plan.finite", "must be at least 1"));
            }
        }
        IterationPlan::UntilCriterion { epsilon, max_rounds } => {
            if !(epsilon.is_finite() && *epsilon >= 0.0) {
                out.push(Violation::new("plan.until_criterion.epsilon", "must be a nonnegative real"));
            }
            if *max_rounds == 0 {
                out.push(Violation::new("plan.until_criterion.max_rounds", "must be at least 1"));
            }
        }
        IterationPlan::UntilCancelled => {}
    }
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

fn check_computation(c: &ComputationParams, out: &mut Vec<Violation>) {
    if c.signals.is_empty() {
        out.push(Violation::new("signals", "must be nonempty"));
    }
    let mut seen = HashSet::new();
    for (i, s) in c.signals.iter().enumerate() {
        if s.is_empty() {
            out.push(Violation::new(format!("signals[{i}]"), "signal name must be nonempty"));
        }
        if !seen.insert(s) {
            out.push(Violation::new(format!("signals[{i}]"), "duplicate signal"));
        }
    }
    if c.samples_per_iteration == 0 {
        out.push(Violation::new("samples_per_iteration", "must be at least 1"));
    }

    let n_signals = c.signals.len();
    match &c.onboard {
        Onboard::Sample { percent } => {
            if !(percent.is_finite() && (0.0..=100.0).contains(percent)) {
                out.push(Violation::new("onboard.percent", "must lie in [0, 100]"));
            }
        }
        Onboard::Anomaly { coefficients, threshold } => {
            if !(threshold.is_finite() && *threshold > 0.0) {
                out.push(Violation::new("onboard.threshold", "must be a positive real"));
            }
            if !all_finite(coefficients) {
                out.push(Violation::new("onboard.coefficients", "must be finite"));
            }
            if coefficients.len() != n_signals + 1 {
                out.push(Violation::new(
                    "onboard.coefficients",
                    "length must equal the number of signals plus one (offset, feature weights, scale)",
                ));
            } else if !(coefficients[n_signals] > 0.0) {
                out.push(Violation::new("onboard.coefficients", "scale (last coefficient) must be positive"));
            }
        }
        Onboard::Histogram { edges } => {
            if edges.len() < 2 {
                out.push(Violation::new("onboard.edges", "needs at least 2 edges"));
            }
            if !all_finite(edges) {
                out.push(Violation::new("onboard.edges", "must be finite"));
            }
            if edges.windows(2).any(|w| !(w[0] < w[1])) {
                out.push(Violation::new("onboard.edges", "must be strictly increasing"));
            }
            if n_signals != 1 {
                out.push(Violation::new("signals", "histogram tasks take exactly one signal"));
            }
        }
        Onboard::Train {
            learning_rate,
            local_epochs,
            batch_window,
        } => {
            if !(learning_rate.is_finite() && *learning_rate > 0.0) {
                out.push(Violation::new("onboard.learning_rate", "must be a positive real"));
            }
            if *local_epochs == 0 {
                out.push(Violation::new("onboard.local_epochs", "must be at least 1"));
            }
            if *batch_window == 0 {
                out.push(Violation::new("onboard.batch_window", "must be at least 1"));
            } else if *batch_window > c.samples_per_iteration {
                out.push(Violation::new("onboard.batch_window", "must not exceed samples_per_iteration"));
            }
            if n_signals < 2 {
                out.push(Violation::new("signals", "train tasks need at least one feature and one target signal"));
            }
        }
    }

    let (on, off) = (c.onboard.kind(), c.offboard.kind());
    if !kinds_compatible(on, off) {
        out.push(Violation::new(
            "offboard.kind",
            format!("pair compatibility: onboard {} cannot feed offboard {}", on.as_str(), off.as_str()),
        ));
    }

    if let Offboard::FederatedAverage {
        validation,
        initial_weights,
    } = &c.offboard
    {
        let dim = n_signals;
        if let Some(w) = initial_weights {
            if w.len() != dim || !all_finite(w) {
                out.push(Violation::new(
                    "offboard.initial_weights",
                    "must be finite with one bias plus one weight per feature signal",
                ));
            }
        }
        match validation {
            Some(ValidationRef::Inline { features, targets }) => {
                if targets.is_empty() {
                    out.push(Violation::new("offboard.validation.inline", "needs at least one row"));
                }
                if features.len() != targets.len() {
                    out.push(Violation::new("offboard.validation.inline", "features and targets differ in length"));
                }
                if features.iter().any(|row| row.len() + 1 != dim) {
                    out.push(Violation::new(
                        "offboard.validation.inline.features",
                        "row width must equal the number of feature signals",
                    ));
                }
                if !features.iter().all(|r| all_finite(r)) || !all_finite(targets) {
                    out.push(Violation::new("offboard.validation.inline", "must be finite"));
                }
            }
            Some(ValidationRef::Linear {
                weights,
                noise_sd,
                samples,
                ..
            }) => {
                if weights.len() != dim || !all_finite(weights) {
                    out.push(Violation::new(
                        "offboard.validation.linear.weights",
                        "must be finite with one bias plus one weight per feature signal",
                    ));
                }
                if !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                    out.push(Violation::new("offboard.validation.linear.noise_sd", "must be nonnegative"));
                }
                if *samples == 0 {
                    out.push(Violation::new("offboard.validation.linear.samples", "must be at least 1"));
                }
            }
            None => {}
        }
    }
}
