//! The cloud's long-lived coordinator activity. It owns the client registry
//! and the table of running assignment handlers, and never waits on client
//! or user I/O: everything reaches it as a [`Command`].

use std::panic::AssertUnwindSafe;
use std::collections::HashMap;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use futures::FutureExt;
use tokio::sync::{mpsc, oneshot};
use tokio::time::Instant;

use super::handler::{AssignmentHandler, HandlerMsg, Terminal};
use super::registry::{ClientLink, ClientRegistry, CountPolicy};
use super::state::AssignmentState;
use super::CloudStats;
use crate::config::{CloudConfig, CountSelection};
use crate::events::{unix_micros, EventKind, EventLog};
use crate::net::Peer;
use crate::protocol::{Aggregate, AssignmentId, AssignmentSpec, ClientId, ClientSelection, DoneStatus, Message};

pub(crate) enum Command {
    ClientConnected(ClientLink),
    ClientMessage {
        client_id: ClientId,
        conn_id: u64,
        message: Message,
    },
    ClientDisconnected {
        client_id: ClientId,
        conn_id: u64,
    },
    Submit {
        spec: AssignmentSpec,
        origin: Peer,
    },
    Cancel(AssignmentId),
    Fleet {
        request_id: u64,
        origin: Peer,
    },
    Resolve {
        selection: ClientSelection,
        policy: CountPolicy,
        reply: oneshot::Sender<Vec<ClientLink>>,
    },
    HandlerFinished(AssignmentId),
    ConnectedClients(oneshot::Sender<Vec<ClientId>>),
    RunningAssignments(oneshot::Sender<usize>),
    Shutdown,
}

pub(crate) struct Coordinator {
    config: CloudConfig,
    registry: ClientRegistry,
    handlers: HashMap<AssignmentId, mpsc::UnboundedSender<HandlerMsg>>,
    events: EventLog,
    stats: Arc<CloudStats>,
    commands: mpsc::UnboundedSender<Command>,
}

impl Coordinator {
    pub fn new(
        config: CloudConfig,
        events: EventLog,
        stats: Arc<CloudStats>,
        commands: mpsc::UnboundedSender<Command>,
    ) -> Self {
        Self {
            config,
            registry: ClientRegistry::new(),
            handlers: HashMap::new(),
            events,
            stats,
            commands,
        }
    }

    fn policy(&self) -> CountPolicy {
        match self.config.count_selection {
            CountSelection::Lexicographic => CountPolicy::Lexicographic,
            CountSelection::Seeded => CountPolicy::Seeded(self.config.selection_seed),
        }
    }

    fn tick_period(&self) -> Duration {
        let shortest = self.config.heartbeat_interval().min(self.config.grace_period());
        (shortest / 4).clamp(Duration::from_millis(5), Duration::from_secs(1))
    }

    pub async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>) {
        let mut tick = tokio::time::interval(self.tick_period());
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                biased;
                cmd = rx.recv() => match cmd {
                    Some(Command::Shutdown) | None => break,
                    Some(cmd) => self.handle(cmd),
                },
                _ = tick.tick() => self.housekeeping(Instant::now()),
            }
        }
        for tx in self.handlers.values() {
            let _ = tx.send(HandlerMsg::Cancel);
        }
    }

    fn broadcast(&self, msg: impl Fn() -> HandlerMsg) {
        for tx in self.handlers.values() {
            let _ = tx.send(msg());
        }
    }

    fn lose(&mut self, client_id: &ClientId, conn_id: u64, now: Instant) {
        if let Some(deadline) = self.registry.mark_lost(client_id, conn_id, now, self.config.grace_period()) {
            let remaining = deadline.saturating_duration_since(now);
            self.events.emit(EventKind::ClientLost {
                client_id: client_id.clone(),
                grace_deadline_us: unix_micros() + remaining.as_micros() as u64,
            });
            // excluded from running iterations; a reconnect re-joins them
            self.broadcast(|| HandlerMsg::Removed(client_id.clone()));
        }
    }

    fn housekeeping(&mut self, now: Instant) {
        for link in self.registry.lapsed(now, self.config.heartbeat_deadline()) {
            link.peer.close();
            self.lose(&link.client_id, link.conn_id, now);
        }
        for id in self.registry.expire(now) {
            self.events.emit(EventKind::ClientRemoved { client_id: id.clone() });
            self.broadcast(|| HandlerMsg::Removed(id.clone()));
        }
    }

    fn handle(&mut self, cmd: Command) {
        let now = Instant::now();
        match cmd {
            Command::ClientConnected(link) => {
                let outcome = self.registry.register(link.clone(), now);
                if let Some(old) = &outcome.superseded {
                    old.peer.close();
                }
                self.events.emit(EventKind::ClientRegistered {
                    client_id: link.client_id.clone(),
                    superseded: outcome.superseded.is_some(),
                });
                self.broadcast(|| HandlerMsg::Joined(link.clone()));
            }
            Command::ClientDisconnected { client_id, conn_id } => self.lose(&client_id, conn_id, now),
            Command::ClientMessage {
                client_id,
                conn_id,
                message,
            } => {
                self.registry.heartbeat(&client_id, conn_id, now);
                self.route(client_id, message);
            }
            Command::Submit { spec, origin } => self.submit(spec, origin),
            Command::Cancel(id) => {
                // unknown or finished assignments: acknowledged as a no-op
                if let Some(tx) = self.handlers.get(&id) {
                    let _ = tx.send(HandlerMsg::Cancel);
                }
            }
            Command::Fleet { request_id, origin } => {
                origin.send(Message::FleetResponse {
                    request_id,
                    clients: self.registry.connected_ids(),
                });
            }
            Command::Resolve {
                selection,
                policy,
                reply,
            } => {
                let _ = reply.send(self.registry.resolve(&selection, policy).unwrap_or_default());
            }
            Command::HandlerFinished(id) => {
                self.handlers.remove(&id);
            }
            Command::ConnectedClients(reply) => {
                let _ = reply.send(self.registry.connected_ids());
            }
            Command::RunningAssignments(reply) => {
                let _ = reply.send(self.handlers.len());
            }
            Command::Shutdown => {}
        }
    }

    fn route(&mut self, sender: ClientId, message: Message) {
        match message {
            Message::Result { result } => {
                let handler = if result.client_id == sender {
                    self.handlers.get(&result.assignment_id)
                } else {
                    None
                };
                match handler {
                    Some(tx) => {
                        self.stats.results_routed.fetch_add(1, Ordering::Relaxed);
                        let _ = tx.send(HandlerMsg::Result(result));
                    }
                    None => {
                        self.stats.stale_results.fetch_add(1, Ordering::Relaxed);
                        self.events.emit(EventKind::StaleResult {
                            assignment_id: Some(result.assignment_id),
                            client_id: sender,
                            iteration: result.iteration,
                        });
                    }
                }
            }
            Message::Error {
                assignment_id: Some(id),
                iteration,
                detail,
                ..
            } => {
                if let Some(tx) = self.handlers.get(&id) {
                    let _ = tx.send(HandlerMsg::Failed {
                        client_id: sender,
                        iteration,
                        detail,
                    });
                }
            }
            // heartbeats only refresh liveness, which already happened
            _ => {}
        }
    }

    fn submit(&mut self, spec: AssignmentSpec, origin: Peer) {
        let id = spec.assignment_id.clone();
        self.events.emit(EventKind::AssignmentReceived { assignment_id: id.clone() });
        if self.handlers.contains_key(&id) {
            origin.send(Message::Error {
                code: "duplicate_assignment".into(),
                detail: format!("assignment {id} is already running"),
                assignment_id: Some(id),
                iteration: None,
                client_id: None,
            });
            return;
        }
        origin.send(Message::Ack { assignment_id: id.clone() });

        let terminal = Terminal::new(origin.clone(), self.events.clone(), id.clone());
        let policy = self.policy();
        let initial = self.registry.resolve(&spec.selection, policy.for_iteration(&id, 0)).unwrap_or_default();
        if initial.is_empty() {
            self.stats.assignments_dropped.fetch_add(1, Ordering::Relaxed);
            terminal.finish(DoneStatus::Dropped, Aggregate::Empty, 0);
            return;
        }

        let timeout = spec
            .iteration_timeout_ms
            .map(Duration::from_millis)
            .unwrap_or(self.config.iteration_timeout());
        let created_at_us = spec.created_at_us;
        let (tx, inbox) = mpsc::unbounded_channel();
        let handler = AssignmentHandler {
            state: AssignmentState::new(spec),
            origin,
            inbox,
            coordinator: self.commands.clone(),
            events: self.events.clone(),
            stats: self.stats.clone(),
            timeout,
            policy,
            terminal: terminal.clone(),
            initial: Some(initial),
        };
        self.handlers.insert(id.clone(), tx);
        self.events.emit(EventKind::HandlerSpawned {
            assignment_id: id.clone(),
            created_at_us,
        });

        let commands = self.commands.clone();
        tokio::spawn(async move {
            if AssertUnwindSafe(handler.run()).catch_unwind().await.is_err() {
                // the handler panicked: only its own assignment is affected
                terminal.finish(DoneStatus::Dropped, Aggregate::Empty, 0);
            }
            let _ = commands.send(Command::HandlerFinished(id));
        });
    }
}
