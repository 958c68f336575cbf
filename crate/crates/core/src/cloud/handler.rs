//! Assignment handler: one activity per assignment, owning its full
//! lifecycle from the first split into tasks to the terminal notification.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{mpsc, oneshot};
use tokio::time::{sleep_until, Instant};

use super::coordinator::Command;
use super::registry::{ClientLink, CountPolicy};
use super::state::{Accept, AssignmentState};
use super::CloudStats;
use crate::events::{EventKind, EventLog};
use crate::net::Peer;
use crate::protocol::{Aggregate, AssignmentId, ClientId, DoneStatus, Message, TaskResult};

#[derive(Debug)]
pub(crate) enum HandlerMsg {
    Result(TaskResult),
    Failed {
        client_id: ClientId,
        iteration: Option<u32>,
        detail: String,
    },
    /// A client (re)registered.
    Joined(ClientLink),
    /// A client lost its connection or its grace period ran out.
    Removed(ClientId),
    Cancel,
}

/// Guards the single terminal notification of an assignment.
#[derive(Clone)]
pub(crate) struct Terminal {
    sent: Arc<AtomicBool>,
    origin: Peer,
    events: EventLog,
    assignment_id: AssignmentId,
}

impl Terminal {
    pub fn new(origin: Peer, events: EventLog, assignment_id: AssignmentId) -> Self {
        Self {
            sent: Arc::new(AtomicBool::new(false)),
            origin,
            events,
            assignment_id,
        }
    }

    /// Sends `AssignmentDone` unless one was already sent.
    pub fn finish(&self, status: DoneStatus, aggregate: Aggregate, iterations: u32) -> bool {
        if self.sent.swap(true, Ordering::SeqCst) {
            return false;
        }
        self.events.emit(EventKind::AssignmentDone {
            assignment_id: self.assignment_id.clone(),
            status,
            iterations,
        });
        self.origin.send(Message::AssignmentDone {
            assignment_id: self.assignment_id.clone(),
            status,
            aggregate,
        });
        true
    }
}

pub(crate) struct AssignmentHandler {
    pub state: AssignmentState,
    pub origin: Peer,
    pub inbox: mpsc::UnboundedReceiver<HandlerMsg>,
    pub coordinator: mpsc::UnboundedSender<Command>,
    pub events: EventLog,
    pub stats: Arc<CloudStats>,
    pub timeout: Duration,
    pub policy: CountPolicy,
    pub terminal: Terminal,
    pub initial: Option<Vec<ClientLink>>,
}

enum Flow {
    Continue,
    Stop,
}

impl AssignmentHandler {
    fn id(&self) -> AssignmentId {
        self.state.spec.assignment_id.clone()
    }

    fn time_limit_ms(&self) -> u64 {
        let t = if self.timeout > Duration::from_secs(10) {
            self.timeout - Duration::from_secs(5)
        } else {
            self.timeout / 2
        };
        t.as_millis() as u64
    }

    async fn resolve(&self) -> Vec<ClientLink> {
        let (reply, rx) = oneshot::channel();
        let policy = self.policy.for_iteration(&self.state.spec.assignment_id, self.state.iteration);
        let cmd = Command::Resolve {
            selection: self.state.spec.selection.clone(),
            policy,
            reply,
        };
        if self.coordinator.send(cmd).is_err() {
            return Vec::new();
        }
        rx.await.unwrap_or_default()
    }

    fn dispatch(&self, link: &ClientLink) {
        let task = self.state.task(Some(self.time_limit_ms()));
        link.peer.send(Message::AssignTask {
            target: link.client_id.clone(),
            task,
        });
    }

    fn cancel_clients(&self) {
        for link in self.state.addressed.values() {
            link.peer.send(Message::Cancel {
                assignment_id: self.id(),
            });
        }
    }

    fn finish(&mut self, status: DoneStatus, aggregate: Aggregate) {
        self.state.status = match status {
            DoneStatus::Completed => super::state::AssignmentStatus::Done,
            DoneStatus::Cancelled => super::state::AssignmentStatus::Cancelled,
            DoneStatus::Dropped => super::state::AssignmentStatus::Dropped,
        };
        self.terminal.finish(status, aggregate, self.state.completed_iterations);
    }

    fn handle(&mut self, msg: HandlerMsg) -> Flow {
        match msg {
            HandlerMsg::Cancel => {
                self.cancel_clients();
                let last = self.state.last_aggregate.clone();
                self.finish(DoneStatus::Cancelled, last);
                return Flow::Stop;
            }
            HandlerMsg::Result(result) => {
                let (client, iteration) = (result.client_id.clone(), result.iteration);
                match self.state.accept(result) {
                    Accept::Accepted => {}
                    Accept::Stale | Accept::Foreign | Accept::Duplicate => {
                        self.stats.stale_results.fetch_add(1, Ordering::Relaxed);
                        self.events.emit(EventKind::StaleResult {
                            assignment_id: Some(self.id()),
                            client_id: client,
                            iteration,
                        });
                    }
                }
            }
            HandlerMsg::Failed {
                client_id,
                iteration,
                detail,
            } => {
                if iteration.is_none_or(|i| i == self.state.iteration) {
                    self.events.emit(EventKind::ClientFailed {
                        assignment_id: self.id(),
                        client_id: client_id.clone(),
                        detail,
                    });
                    self.state.exclude(&client_id);
                }
            }
            HandlerMsg::Joined(link) => {
                if self.state.status == super::state::AssignmentStatus::AwaitingResults && self.state.wants(&link.client_id) {
                    self.events.emit(EventKind::ClientJoinedIteration {
                        assignment_id: self.id(),
                        iteration: self.state.iteration,
                        client_id: link.client_id.clone(),
                    });
                    self.dispatch(&link);
                    self.state.join(link);
                }
            }
            HandlerMsg::Removed(client) => self.state.exclude(&client),
        }
        Flow::Continue
    }

    pub async fn run(mut self) {
        loop {
            // Anything queued between iterations (late results, a cancel) is
            // handled before the next split.
            while let Ok(msg) = self.inbox.try_recv() {
                if let Flow::Stop = self.handle(msg) {
                    return;
                }
            }

            let links = match self.initial.take() {
                Some(l) => l,
                None => self.resolve().await,
            };
            if links.is_empty() && self.state.iteration == 0 {
                self.finish(DoneStatus::Dropped, Aggregate::Empty);
                return;
            }

            let started = Instant::now();
            let deadline = started + self.timeout;
            self.state.start_iteration(links);
            self.events.emit(EventKind::IterationStarted {
                assignment_id: self.id(),
                iteration: self.state.iteration,
                addressed: self.state.addressed.keys().cloned().collect(),
            });
            for link in self.state.addressed.values() {
                self.dispatch(link);
            }

            let mut timed_out = false;
            while !self.state.iteration_complete() {
                tokio::select! {
                    msg = self.inbox.recv() => match msg {
                        Some(msg) => {
                            if let Flow::Stop = self.handle(msg) {
                                return;
                            }
                        }
                        None => {
                            self.finish(DoneStatus::Dropped, Aggregate::Empty);
                            return;
                        }
                    },
                    _ = sleep_until(deadline) => {
                        timed_out = true;
                        break;
                    }
                }
            }
            let elapsed = started.elapsed();
            self.events.emit(EventKind::IterationCompleted {
                assignment_id: self.id(),
                iteration: self.state.iteration,
                contributors: self.state.contributors(),
                elapsed_us: elapsed.as_micros() as u64,
                timed_out,
            });

            let aggregate = match self.state.aggregate() {
                Ok(a) => a,
                Err(e) => {
                    self.events.emit(EventKind::AggregationFailed {
                        assignment_id: self.id(),
                        iteration: self.state.iteration,
                        detail: e.to_string(),
                    });
                    let last = self.state.last_aggregate.clone();
                    self.finish(DoneStatus::Dropped, last);
                    return;
                }
            };
            if self.state.spec.emit_intermediate {
                self.origin.send(Message::AssignmentUpdate {
                    assignment_id: self.id(),
                    iteration: self.state.iteration,
                    aggregate: aggregate.clone(),
                });
            }
            if self.state.finish_iteration(aggregate) {
                let last = self.state.last_aggregate.clone();
                self.finish(DoneStatus::Completed, last);
                return;
            }
        }
    }
}
