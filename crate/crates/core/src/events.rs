//! Structured event log: one JSON line per state transition.
//!
//! The cloud publishes every transition here. Subscribers (the benchmark
//! harness, tests) receive a copy over an unbounded channel, and an
//! optional writer appends each event as one line of text.

use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::protocol::{AssignmentId, ClientId, DoneStatus};

pub fn unix_micros() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub ts_us: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    ClientRegistered {
        client_id: ClientId,
        superseded: bool,
    },
    ClientLost {
        client_id: ClientId,
        grace_deadline_us: u64,
    },
    ClientRemoved {
        client_id: ClientId,
    },
    AssignmentReceived {
        assignment_id: AssignmentId,
    },
    AssignmentRejected {
        detail: String,
    },
    HandlerSpawned {
        assignment_id: AssignmentId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        created_at_us: Option<u64>,
    },
    IterationStarted {
        assignment_id: AssignmentId,
        iteration: u32,
        addressed: Vec<ClientId>,
    },
    ClientJoinedIteration {
        assignment_id: AssignmentId,
        iteration: u32,
        client_id: ClientId,
    },
    IterationCompleted {
        assignment_id: AssignmentId,
        iteration: u32,
        contributors: Vec<ClientId>,
        /// Split into tasks until the last result arrived (or the timeout).
        elapsed_us: u64,
        timed_out: bool,
    },
    StaleResult {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        assignment_id: Option<AssignmentId>,
        client_id: ClientId,
        iteration: u32,
    },
    ClientFailed {
        assignment_id: AssignmentId,
        client_id: ClientId,
        detail: String,
    },
    AggregationFailed {
        assignment_id: AssignmentId,
        iteration: u32,
        detail: String,
    },
    AssignmentDone {
        assignment_id: AssignmentId,
        status: DoneStatus,
        iterations: u32,
    },
}

type Sink = Box<dyn Write + Send>;

/// Cheaply cloneable publisher.
#[derive(Clone, Default)]
pub struct EventLog {
    inner: Arc<Mutex<Inner>>,
}

#[derive(Default)]
struct Inner {
    subscribers: Vec<mpsc::UnboundedSender<Event>>,
    sink: Option<Sink>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also writes every event as a JSON line to `sink`.
    pub fn with_sink(sink: Sink) -> Self {
        let log = Self::default();
        log.inner.lock().expect("event log poisoned").sink = Some(sink);
        log
    }

    pub fn subscribe(&self) -> mpsc::UnboundedReceiver<Event> {
        let (tx, rx) = mpsc::unbounded_channel();
        self.inner.lock().expect("event log poisoned").subscribers.push(tx);
        rx
    }

    pub fn emit(&self, kind: EventKind) {
        let event = Event {
            ts_us: unix_micros(),
            kind,
        };
        let mut inner = self.inner.lock().expect("event log poisoned");
        inner.subscribers.retain(|s| s.send(event.clone()).is_ok());
        if let Some(sink) = inner.sink.as_mut() {
            if let Ok(line) = serde_json::to_string(&event) {
                let _ = writeln!(sink, "{line}");
            }
        }
    }
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog").finish_non_exhaustive()
    }
}
