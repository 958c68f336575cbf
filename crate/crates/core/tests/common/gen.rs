//! Random protocol messages for round-trip fuzzing.

use std::collections::BTreeMap;

use oodida::protocol::*;
use rand::Rng;
use serde_json::{json, Value};

pub fn float(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..8) {
        0 => 0.0,
        1 => -0.0,
        2 => f64::MIN_POSITIVE * rng.random::<f64>(),
        3 => f64::MAX * (rng.random::<f64>() - 0.5),
        4 => rng.random_range(-1e6..1e6f64).round(),
        5 => f64::from_bits(rng.next_u64() & !(0x7ff << 52) | (rng.random_range(1..2046u64) << 52)),
        _ => rng.random_range(-1e3..1e3),
    }
}

pub fn string(rng: &mut impl Rng) -> String {
    const POOL: &[char] = &['a', 'Z', '0', ' ', '"', '\\', '\n', '\t', '\u{0}', 'é', 'ß', '漢', '🚗', '/', '{', '}'];
    (0..rng.random_range(0..12)).map(|_| POOL[rng.random_range(0..POOL.len())]).collect()
}

fn floats(rng: &mut impl Rng, max: usize) -> Vec<f64> {
    (0..rng.random_range(0..max)).map(|_| float(rng)).collect()
}

fn client(rng: &mut impl Rng) -> ClientId {
    ClientId::new(string(rng))
}

fn assignment(rng: &mut impl Rng) -> AssignmentId {
    if rng.random_bool(0.8) {
        AssignmentId::generate()
    } else {
        AssignmentId::new(string(rng))
    }
}

fn histogram(rng: &mut impl Rng) -> Histogram {
    Histogram {
        edges: floats(rng, 6),
        mass: floats(rng, 6),
        empty: rng.random(),
    }
}

fn model(rng: &mut impl Rng) -> ModelParams {
    ModelParams {
        weights: floats(rng, 5),
        sample_count: rng.random(),
    }
}

fn onboard(rng: &mut impl Rng) -> Onboard {
    match rng.random_range(0..4) {
        0 => Onboard::Sample { percent: float(rng) },
        1 => Onboard::Anomaly {
            coefficients: floats(rng, 5),
            threshold: float(rng),
        },
        2 => Onboard::Histogram { edges: floats(rng, 6) },
        _ => Onboard::Train {
            learning_rate: float(rng),
            local_epochs: rng.random(),
            batch_window: rng.random(),
        },
    }
}

fn offboard(rng: &mut impl Rng) -> Offboard {
    match rng.random_range(0..4) {
        0 => Offboard::Collect,
        1 => Offboard::AverageHistograms,
        2 => Offboard::FederatedAverage {
            validation: None,
            initial_weights: rng.random_bool(0.5).then(|| floats(rng, 4)),
        },
        _ => Offboard::FederatedAverage {
            validation: Some(if rng.random_bool(0.5) {
                ValidationRef::Inline {
                    features: (0..rng.random_range(0..4)).map(|_| floats(rng, 3)).collect(),
                    targets: floats(rng, 4),
                }
            } else {
                ValidationRef::Linear {
                    weights: floats(rng, 3),
                    noise_sd: float(rng),
                    samples: rng.random(),
                    seed: rng.random(),
                }
            }),
            initial_weights: None,
        },
    }
}

fn computation(rng: &mut impl Rng) -> ComputationParams {
    ComputationParams {
        onboard: onboard(rng),
        offboard: offboard(rng),
        signals: (0..rng.random_range(0..4)).map(|_| string(rng)).collect(),
        samples_per_iteration: rng.random(),
    }
}

fn body(rng: &mut impl Rng) -> ResultBody {
    match rng.random_range(0..4) {
        0 => ResultBody::Sample {
            values: (0..rng.random_range(0..3)).map(|_| (string(rng), floats(rng, 5))).collect::<BTreeMap<_, _>>(),
        },
        1 => ResultBody::Anomaly {
            records: (0..rng.random_range(0..3))
                .map(|_| AnomalyRecord {
                    client_id: client(rng),
                    signal: string(rng),
                    value: float(rng),
                    score: float(rng),
                    timestamp: float(rng),
                })
                .collect(),
        },
        2 => ResultBody::Histogram { histogram: histogram(rng) },
        _ => ResultBody::Train { model: model(rng) },
    }
}

fn aggregate(rng: &mut impl Rng) -> Aggregate {
    match rng.random_range(0..4) {
        0 => Aggregate::Empty,
        1 => Aggregate::Collected {
            entries: (0..rng.random_range(0..3))
                .map(|_| CollectedEntry {
                    client_id: client(rng),
                    body: body(rng),
                })
                .collect(),
        },
        2 => Aggregate::Histogram {
            histogram: histogram(rng),
            contributors: rng.random(),
        },
        _ => Aggregate::Model {
            model: model(rng),
            validation_error: rng.random_bool(0.5).then(|| float(rng)),
        },
    }
}

fn status(rng: &mut impl Rng) -> DoneStatus {
    [DoneStatus::Completed, DoneStatus::Cancelled, DoneStatus::Dropped][rng.random_range(0..3)]
}

fn pending_status(rng: &mut impl Rng) -> PendingStatus {
    use PendingStatus::*;
    [Sent, Running, Completed, Cancelled, Dropped, Error][rng.random_range(0..6)]
}

fn value(rng: &mut impl Rng, depth: u32) -> Value {
    match rng.random_range(0..if depth > 2 { 4 } else { 6 }) {
        0 => Value::Null,
        1 => json!(rng.random::<bool>()),
        2 => json!(float(rng)),
        3 => json!(string(rng)),
        4 => Value::Array((0..rng.random_range(0..4)).map(|_| value(rng, depth + 1)).collect()),
        _ => Value::Object((0..rng.random_range(0..4)).map(|_| (string(rng), value(rng, depth + 1))).collect()),
    }
}

/// One random message of a uniformly chosen kind.
pub fn message(rng: &mut impl Rng) -> Message {
    match rng.random_range(0..14) {
        0 => Message::RegisterClient { client_id: client(rng) },
        1 => Message::SubmitAssignment { assignment: value(rng, 0) },
        2 => Message::Ack {
            assignment_id: assignment(rng),
        },
        3 => Message::AssignTask {
            target: client(rng),
            task: TaskSpec {
                assignment_id: assignment(rng),
                iteration: rng.random(),
                computation: computation(rng),
                payload: rng.random_bool(0.5).then(|| model(rng)),
                time_limit_ms: rng.random_bool(0.5).then(|| rng.random()),
            },
        },
        4 => Message::Result {
            result: TaskResult {
                assignment_id: assignment(rng),
                iteration: rng.random(),
                client_id: client(rng),
                body: body(rng),
            },
        },
        5 => Message::AssignmentUpdate {
            assignment_id: assignment(rng),
            iteration: rng.random(),
            aggregate: aggregate(rng),
        },
        6 => Message::AssignmentDone {
            assignment_id: assignment(rng),
            status: status(rng),
            aggregate: aggregate(rng),
        },
        7 => Message::Cancel {
            assignment_id: assignment(rng),
        },
        8 => Message::Heartbeat { client_id: client(rng) },
        9 => Message::Error {
            code: string(rng),
            detail: string(rng),
            assignment_id: rng.random_bool(0.5).then(|| assignment(rng)),
            iteration: rng.random_bool(0.5).then(|| rng.random()),
            client_id: rng.random_bool(0.5).then(|| client(rng)),
        },
        10 => Message::StatusRequest,
        11 => Message::StatusResponse {
            assignments: (0..rng.random_range(0..3))
                .map(|_| PendingAssignment {
                    assignment_id: assignment(rng),
                    submitted_at_us: rng.random(),
                    status: pending_status(rng),
                    updates_seen: rng.random(),
                })
                .collect(),
        },
        12 => Message::FleetRequest { request_id: rng.random() },
        _ => Message::FleetResponse {
            request_id: rng.random(),
            clients: (0..rng.random_range(0..4)).map(|_| client(rng)).collect(),
        },
    }
}
