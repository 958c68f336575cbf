//! The cloud node: client registry, one handler per assignment, result
//! routing, and the user- and client-facing listeners.

mod coordinator;
mod handler;
pub mod registry;
pub mod state;

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};

use crate::config::CloudConfig;
use crate::events::{unix_micros, EventKind, EventLog};
use crate::net::{self, BoxFuture, BoxStream, Connector, Peer};
use crate::protocol::{read_message, validate_value, AssignmentId, ClientId, Message, ProtocolError};
use coordinator::{Command, Coordinator};
use registry::ClientLink;

pub use registry::{resolve_selection, ClientRegistry, CountPolicy, EmptySelection, Liveness};
pub use state::{aggregate, Accept, AggregationError, AssignmentState, AssignmentStatus};

/// Counters shared by the coordinator and the handlers.
#[derive(Debug, Default)]
pub struct CloudStats {
    pub assignments_accepted: AtomicU64,
    pub assignments_rejected: AtomicU64,
    pub assignments_dropped: AtomicU64,
    pub results_routed: AtomicU64,
    /// Results for unknown or finished assignments, earlier iterations,
    /// unaddressed senders and duplicates. Discarded silently.
    pub stale_results: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StatsSnapshot {
    pub assignments_accepted: u64,
    pub assignments_rejected: u64,
    pub assignments_dropped: u64,
    pub results_routed: u64,
    pub stale_results: u64,
}

impl CloudStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        StatsSnapshot {
            assignments_accepted: get(&self.assignments_accepted),
            assignments_rejected: get(&self.assignments_rejected),
            assignments_dropped: get(&self.assignments_dropped),
            results_routed: get(&self.results_routed),
            stale_results: get(&self.stale_results),
        }
    }
}

struct Shared {
    commands: mpsc::UnboundedSender<Command>,
    events: EventLog,
    stats: Arc<CloudStats>,
    next_conn: AtomicU64,
    shutdown: watch::Sender<bool>,
}

/// Handle to a running cloud node. Cheap to clone.
#[derive(Clone)]
pub struct Cloud {
    shared: Arc<Shared>,
}

/// A cloud node listening on TCP.
pub struct CloudServer {
    pub cloud: Cloud,
    pub user_addr: SocketAddr,
    pub client_addr: SocketAddr,
}

impl Cloud {
    /// Starts the coordinator. Connections are attached afterwards, either
    /// in-process or through [`Cloud::bind`].
    pub fn start(config: CloudConfig, events: EventLog) -> Self {
        let (tx, rx) = mpsc::unbounded_channel();
        let stats = Arc::new(CloudStats::default());
        let coordinator = Coordinator::new(config, events.clone(), stats.clone(), tx.clone());
        tokio::spawn(coordinator.run(rx));
        let (shutdown, _) = watch::channel(false);
        Self {
            shared: Arc::new(Shared {
                commands: tx,
                events,
                stats,
                next_conn: AtomicU64::new(1),
                shutdown,
            }),
        }
    }

    /// Starts a cloud node and binds both listeners from the config.
    pub async fn bind(config: CloudConfig, events: EventLog) -> io::Result<CloudServer> {
        let user = TcpListener::bind(&config.user_listen).await?;
        let client = TcpListener::bind(&config.client_listen).await?;
        let (user_addr, client_addr) = (user.local_addr()?, client.local_addr()?);
        let cloud = Self::start(config, events);
        cloud.serve(user, |c, s| c.attach_user(s));
        cloud.serve(client, |c, s| c.attach_client(s));
        Ok(CloudServer {
            cloud,
            user_addr,
            client_addr,
        })
    }

    fn serve(&self, listener: TcpListener, attach: fn(&Cloud, BoxStream)) {
        let cloud = self.clone();
        let mut stop = self.shared.shutdown.subscribe();
        tokio::spawn(async move {
            loop {
                tokio::select! {
                    accepted = listener.accept() => match accepted {
                        Ok((s, _)) => {
                            let _ = s.set_nodelay(true);
                            attach(&cloud, Box::new(s));
                        }
                        Err(_) => continue,
                    },
                    _ = stop.wait_for(|s| *s) => break,
                }
            }
        });
    }

    pub fn events(&self) -> &EventLog {
        &self.shared.events
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.shared.stats.snapshot()
    }

    pub fn is_shut_down(&self) -> bool {
        *self.shared.shutdown.borrow()
    }

    /// Serves a client agent over `stream`.
    pub fn attach_client(&self, stream: BoxStream) {
        let conn_id = self.shared.next_conn.fetch_add(1, Ordering::Relaxed);
        tokio::spawn(client_connection(stream, conn_id, self.shared.clone()));
    }

    /// Serves a user node over `stream`.
    pub fn attach_user(&self, stream: BoxStream) {
        tokio::spawn(user_connection(stream, self.shared.clone()));
    }

    /// An in-process connector for client agents.
    pub fn client_connector(&self) -> impl Connector + Clone {
        let cloud = self.clone();
        move || -> BoxFuture<io::Result<BoxStream>> {
            let cloud = cloud.clone();
            Box::pin(async move { cloud.duplex(Cloud::attach_client) })
        }
    }

    /// An in-process connector for user nodes.
    pub fn user_connector(&self) -> impl Connector + Clone {
        let cloud = self.clone();
        move || -> BoxFuture<io::Result<BoxStream>> {
            let cloud = cloud.clone();
            Box::pin(async move { cloud.duplex(Cloud::attach_user) })
        }
    }

    fn duplex(&self, attach: fn(&Cloud, BoxStream)) -> io::Result<BoxStream> {
        if self.is_shut_down() {
            return Err(io::Error::new(io::ErrorKind::ConnectionRefused, "cloud is shut down"));
        }
        let (near, far) = tokio::io::duplex(1 << 16);
        attach(self, Box::new(far));
        Ok(Box::new(near))
    }

    pub async fn connected_clients(&self) -> Vec<ClientId> {
        let (tx, rx) = oneshot::channel();
        let _ = self.shared.commands.send(Command::ConnectedClients(tx));
        rx.await.unwrap_or_default()
    }

    pub async fn running_assignments(&self) -> usize {
        let (tx, rx) = oneshot::channel();
        let _ = self.shared.commands.send(Command::RunningAssignments(tx));
        rx.await.unwrap_or_default()
    }

    /// Stops listening, closes every connection and cancels all running
    /// assignments. Nothing is persisted.
    pub fn shutdown(&self) {
        self.shared.shutdown.send_replace(true);
        let _ = self.shared.commands.send(Command::Shutdown);
    }
}

enum Read {
    Message(Message),
    /// A complete frame that could not be decoded; the stream is still in sync.
    Bad(ProtocolError),
    Closed,
}

async fn next(read: &mut net::Reader, peer: &Peer, stop: &mut watch::Receiver<bool>) -> Read {
    tokio::select! {
        biased;
        r = read_message(read) => match r {
            Ok(Some(m)) => Read::Message(m),
            Err(e @ (ProtocolError::MalformedBody(_) | ProtocolError::UnknownKind(_))) => Read::Bad(e),
            Ok(None) | Err(_) => Read::Closed,
        },
        _ = peer.closed() => Read::Closed,
        _ = stop.wait_for(|s| *s) => Read::Closed,
    }
}

async fn client_connection(stream: BoxStream, conn_id: u64, shared: Arc<Shared>) {
    let (mut read, peer) = net::split(stream);
    let mut stop = shared.shutdown.subscribe();
    let client_id = loop {
        match next(&mut read, &peer, &mut stop).await {
            Read::Message(Message::RegisterClient { client_id }) if !client_id.as_str().is_empty() => break client_id,
            Read::Message(m) => {
                peer.send(Message::error(
                    "not_registered",
                    format!("expected register_client, got {}", m.kind_name()),
                ));
            }
            Read::Bad(e) => {
                peer.send(Message::error("protocol_error", e.to_string()));
            }
            Read::Closed => {
                peer.close();
                return;
            }
        }
    };
    let link = ClientLink {
        client_id: client_id.clone(),
        conn_id,
        peer: peer.clone(),
    };
    if shared.commands.send(Command::ClientConnected(link)).is_err() {
        peer.close();
        return;
    }
    loop {
        match next(&mut read, &peer, &mut stop).await {
            Read::Message(message) => {
                let cmd = Command::ClientMessage {
                    client_id: client_id.clone(),
                    conn_id,
                    message,
                };
                if shared.commands.send(cmd).is_err() {
                    break;
                }
            }
            Read::Bad(e) => {
                peer.send(Message::error("protocol_error", e.to_string()));
            }
            Read::Closed => break,
        }
    }
    let _ = shared.commands.send(Command::ClientDisconnected { client_id, conn_id });
    peer.close();
}

fn document_id(doc: &Value) -> Option<AssignmentId> {
    doc.get("assignment_id").and_then(Value::as_str).map(AssignmentId::new)
}

async fn user_connection(stream: BoxStream, shared: Arc<Shared>) {
    let (mut read, peer) = net::split(stream);
    let mut stop = shared.shutdown.subscribe();
    loop {
        let message = match next(&mut read, &peer, &mut stop).await {
            Read::Message(m) => m,
            Read::Bad(e) => {
                peer.send(Message::error("protocol_error", e.to_string()));
                continue;
            }
            Read::Closed => break,
        };
        let cmd = match message {
            Message::SubmitAssignment { assignment } => match validate_value(&assignment) {
                Ok(mut spec) => {
                    spec.created_at_us.get_or_insert_with(unix_micros);
                    shared.stats.assignments_accepted.fetch_add(1, Ordering::Relaxed);
                    Command::Submit {
                        spec,
                        origin: peer.clone(),
                    }
                }
                Err(e) => {
                    shared.stats.assignments_rejected.fetch_add(1, Ordering::Relaxed);
                    shared.events.emit(EventKind::AssignmentRejected { detail: e.to_string() });
                    peer.send(Message::Error {
                        code: "validation_failed".into(),
                        detail: e.to_string(),
                        assignment_id: document_id(&assignment),
                        iteration: None,
                        client_id: None,
                    });
                    continue;
                }
            },
            Message::Cancel { assignment_id } => Command::Cancel(assignment_id),
            Message::FleetRequest { request_id } => Command::Fleet {
                request_id,
                origin: peer.clone(),
            },
            Message::Heartbeat { .. } => continue,
            other => {
                peer.send(Message::error(
                    "unexpected_message",
                    format!("{} is not accepted on the user port", other.kind_name()),
                ));
                continue;
            }
        };
        if shared.commands.send(cmd).is_err() {
            break;
        }
    }
    peer.close();
}
