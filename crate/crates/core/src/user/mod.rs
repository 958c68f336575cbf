//! The user node: accepts front-end connections, validates and forwards
//! assignments to the cloud, and relays every update back to the
//! connection that submitted the assignment.

mod frontend;

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};

use crate::events::unix_micros;
use crate::net::{self, Backoff, BoxFuture, BoxStream, Connector, Peer};
use crate::protocol::{
    read_message, validate_value, AssignmentId, Message, PendingAssignment, PendingStatus, ProtocolError,
};

pub use frontend::{message_assignment, FrontendClient};

#[derive(Debug, Clone)]
pub struct UserConfig {
    /// Each terminal result is also written to `<dir>/<assignment_id>.json`.
    pub dump_dir: Option<PathBuf>,
    pub reconnect_base: Duration,
    pub reconnect_cap: Duration,
    /// Recorded as `submitted_by` when a document leaves it empty.
    pub user: String,
}

impl Default for UserConfig {
    fn default() -> Self {
        Self {
            dump_dir: None,
            reconnect_base: Duration::from_secs(1),
            reconnect_cap: Duration::from_secs(30),
            user: "analyst".into(),
        }
    }
}

enum Cmd {
    FrontendConnected { conn: u64, peer: Peer },
    FrontendMessage { conn: u64, message: Message },
    FrontendClosed { conn: u64 },
    CloudConnected { link: u64, peer: Peer },
    CloudMessage { link: u64, message: Message },
    CloudLost { link: u64 },
    Status(oneshot::Sender<Vec<PendingAssignment>>),
    CloudUp(oneshot::Sender<bool>),
}

struct Pending {
    info: PendingAssignment,
    owner: u64,
    last_iteration: Option<u32>,
}

struct Relay {
    config: UserConfig,
    frontends: HashMap<u64, Peer>,
    cloud: Option<(u64, Peer)>,
    pending: BTreeMap<AssignmentId, Pending>,
    fleet: HashMap<u64, (u64, u64)>,
    next_fleet: u64,
}

fn error_for(code: &str, detail: impl Into<String>, id: Option<AssignmentId>) -> Message {
    Message::Error {
        code: code.into(),
        detail: detail.into(),
        assignment_id: id,
        iteration: None,
        client_id: None,
    }
}

impl Relay {
    fn to_frontend(&self, conn: u64, m: Message) {
        if let Some(p) = self.frontends.get(&conn) {
            p.send(m);
        }
    }

    fn to_owner(&self, id: &AssignmentId, m: Message) {
        if let Some(p) = self.pending.get(id) {
            self.to_frontend(p.owner, m);
        }
    }

    fn handle(&mut self, cmd: Cmd) {
        match cmd {
            Cmd::FrontendConnected { conn, peer } => {
                self.frontends.insert(conn, peer);
            }
            Cmd::FrontendClosed { conn } => {
                self.frontends.remove(&conn);
            }
            Cmd::FrontendMessage { conn, message } => self.from_frontend(conn, message),
            Cmd::CloudConnected { link, peer } => {
                tracing::info!("connected to cloud");
                self.cloud = Some((link, peer));
            }
            Cmd::CloudMessage { link, message } => {
                if self.cloud.as_ref().is_some_and(|(l, _)| *l == link) {
                    self.from_cloud(message);
                }
            }
            Cmd::CloudLost { link } => {
                if self.cloud.as_ref().is_some_and(|(l, _)| *l == link) {
                    self.cloud_lost();
                }
            }
            Cmd::Status(reply) => {
                let _ = reply.send(self.status());
            }
            Cmd::CloudUp(reply) => {
                let _ = reply.send(self.cloud.is_some());
            }
        }
    }

    fn status(&self) -> Vec<PendingAssignment> {
        let mut all: Vec<PendingAssignment> = self.pending.values().map(|p| p.info.clone()).collect();
        all.sort_by(|a, b| (a.submitted_at_us, &a.assignment_id).cmp(&(b.submitted_at_us, &b.assignment_id)));
        all
    }

    fn from_frontend(&mut self, conn: u64, message: Message) {
        match message {
            Message::SubmitAssignment { assignment } => self.submit(conn, assignment),
            Message::Cancel { assignment_id } => {
                let live = self.pending.get(&assignment_id).is_some_and(|p| !p.info.status.is_terminal());
                if let (true, Some((_, cloud))) = (live, &self.cloud) {
                    cloud.send(Message::Cancel { assignment_id });
                }
            }
            Message::StatusRequest => {
                let assignments = self.status();
                self.to_frontend(conn, Message::StatusResponse { assignments });
            }
            Message::FleetRequest { request_id } => match &self.cloud {
                Some((_, cloud)) => {
                    self.next_fleet += 1;
                    self.fleet.insert(self.next_fleet, (conn, request_id));
                    cloud.send(Message::FleetRequest {
                        request_id: self.next_fleet,
                    });
                }
                None => self.to_frontend(conn, error_for("cloud_unreachable", "no connection to the cloud", None)),
            },
            Message::Heartbeat { .. } => {}
            other => self.to_frontend(
                conn,
                error_for(
                    "unexpected_message",
                    format!("{} is not accepted from a front-end", other.kind_name()),
                    None,
                ),
            ),
        }
    }

    fn submit(&mut self, conn: u64, mut doc: Value) {
        if let Value::Object(map) = &mut doc {
            map.entry("assignment_id")
                .or_insert_with(|| Value::String(AssignmentId::generate().to_string()));
            map.entry("created_at_us").or_insert_with(|| Value::from(unix_micros()));
            let user = Value::String(self.config.user.clone());
            match map.get("submitted_by") {
                Some(Value::String(s)) if !s.is_empty() => {}
                _ => {
                    map.insert("submitted_by".into(), user);
                }
            }
        }
        let spec = match validate_value(&doc) {
            Ok(spec) => spec,
            Err(e) => {
                let id = doc.get("assignment_id").and_then(Value::as_str).map(AssignmentId::new);
                self.to_frontend(conn, error_for("validation_failed", e.to_string(), id));
                return;
            }
        };
        let id = spec.assignment_id;
        if self.pending.contains_key(&id) {
            self.to_frontend(
                conn,
                error_for("duplicate_assignment", format!("assignment {id} was already submitted"), Some(id)),
            );
            return;
        }
        let status = match &self.cloud {
            Some((_, cloud)) => {
                cloud.send(Message::SubmitAssignment { assignment: doc });
                PendingStatus::Sent
            }
            None => {
                self.to_frontend(
                    conn,
                    error_for("cloud_unreachable", "no connection to the cloud", Some(id.clone())),
                );
                PendingStatus::Error
            }
        };
        self.pending.insert(
            id.clone(),
            Pending {
                info: PendingAssignment {
                    assignment_id: id,
                    submitted_at_us: unix_micros(),
                    status,
                    updates_seen: 0,
                },
                owner: conn,
                last_iteration: None,
            },
        );
    }

    fn live(&mut self, id: &AssignmentId) -> Option<&mut Pending> {
        self.pending.get_mut(id).filter(|p| !p.info.status.is_terminal())
    }

    fn from_cloud(&mut self, message: Message) {
        match &message {
            Message::Ack { assignment_id } => {
                let Some(p) = self.live(assignment_id) else { return };
                p.info.status = PendingStatus::Running;
                let id = assignment_id.clone();
                self.to_owner(&id, message);
            }
            Message::AssignmentUpdate {
                assignment_id,
                iteration,
                ..
            } => {
                let Some(p) = self.live(assignment_id) else { return };
                if p.last_iteration.is_some_and(|last| *iteration <= last) {
                    return;
                }
                p.last_iteration = Some(*iteration);
                p.info.updates_seen += 1;
                p.info.status = PendingStatus::Running;
                let id = assignment_id.clone();
                self.to_owner(&id, message);
            }
            Message::AssignmentDone {
                assignment_id, status, ..
            } => {
                let Some(p) = self.live(assignment_id) else { return };
                p.info.status = (*status).into();
                let id = assignment_id.clone();
                if let Some(dir) = &self.config.dump_dir {
                    dump(dir.clone(), &id, &message);
                }
                self.to_owner(&id, message);
            }
            Message::Error {
                assignment_id: Some(id),
                ..
            } => {
                let Some(p) = self.live(id) else { return };
                p.info.status = PendingStatus::Error;
                let id = id.clone();
                self.to_owner(&id, message);
            }
            Message::FleetResponse { request_id, clients } => {
                if let Some((conn, original)) = self.fleet.remove(request_id) {
                    self.to_frontend(
                        conn,
                        Message::FleetResponse {
                            request_id: original,
                            clients: clients.clone(),
                        },
                    );
                }
            }
            other => tracing::debug!(kind = other.kind_name(), "ignoring message from cloud"),
        }
    }

    fn cloud_lost(&mut self) {
        tracing::warn!("lost connection to cloud");
        self.cloud = None;
        let lost: Vec<AssignmentId> = self
            .pending
            .iter()
            .filter(|(_, p)| !p.info.status.is_terminal())
            .map(|(id, _)| id.clone())
            .collect();
        for id in lost {
            if let Some(p) = self.pending.get_mut(&id) {
                p.info.status = PendingStatus::Error;
            }
            self.to_owner(&id, error_for("cloud_lost", "connection to the cloud was lost", Some(id.clone())));
        }
        for (_, (conn, _)) in std::mem::take(&mut self.fleet) {
            self.to_frontend(conn, error_for("cloud_lost", "connection to the cloud was lost", None));
        }
    }
}

fn dump(dir: PathBuf, id: &AssignmentId, message: &Message) {
    let path = dir.join(format!("{id}.json"));
    let text = match serde_json::to_vec_pretty(message) {
        Ok(t) => t,
        Err(e) => {
            tracing::warn!(error = %e, "cannot serialize result for dumping");
            return;
        }
    };
    tokio::spawn(async move {
        if let Err(e) = tokio::fs::write(&path, text).await {
            tracing::warn!(path = %path.display(), error = %e, "cannot write result file");
        }
    });
}

struct Shared {
    commands: mpsc::UnboundedSender<Cmd>,
    next_conn: AtomicU64,
    shutdown: watch::Sender<bool>,
}

/// Handle to a running user node. Cheap to clone.
#[derive(Clone)]
pub struct UserNode {
    shared: Arc<Shared>,
}

impl UserNode {
    /// Starts the relay and the cloud link. Front-ends attach afterwards.
    pub fn start(config: UserConfig, cloud: impl Connector) -> Self {
        let (tx, mut rx) = mpsc::unbounded_channel();
        let (shutdown, _) = watch::channel(false);
        let backoff = Backoff::new(config.reconnect_base, config.reconnect_cap);
        let mut relay = Relay {
            config,
            frontends: HashMap::new(),
            cloud: None,
            pending: BTreeMap::new(),
            fleet: HashMap::new(),
            next_fleet: 0,
        };
        let mut stop = shutdown.subscribe();
        tokio::spawn(async move {
            loop {
                tokio::select! {
                    biased;
                    cmd = rx.recv() => match cmd {
                        Some(cmd) => relay.handle(cmd),
                        None => break,
                    },
                    _ = stop.wait_for(|s| *s) => break,
                }
            }
            if let Some((_, cloud)) = relay.cloud.take() {
                cloud.close();
            }
            for p in relay.frontends.values() {
                p.close();
            }
        });
        tokio::spawn(cloud_link(cloud, backoff, tx.clone(), shutdown.subscribe()));
        Self {
            shared: Arc::new(Shared {
                commands: tx,
                next_conn: AtomicU64::new(1),
                shutdown,
            }),
        }
    }

    /// Starts a user node accepting front-ends on `listen`.
    pub async fn bind(config: UserConfig, cloud: impl Connector, listen: &str) -> io::Result<(Self, SocketAddr)> {
        let listener = TcpListener::bind(listen).await?;
        let addr = listener.local_addr()?;
        let node = Self::start(config, cloud);
        let accept = node.clone();
        let mut stop = node.shared.shutdown.subscribe();
        tokio::spawn(async move {
            loop {
                tokio::select! {
                    accepted = listener.accept() => {
                        if let Ok((s, _)) = accepted {
                            let _ = s.set_nodelay(true);
                            accept.attach_frontend(Box::new(s));
                        }
                    }
                    _ = stop.wait_for(|s| *s) => break,
                }
            }
        });
        Ok((node, addr))
    }

    pub fn attach_frontend(&self, stream: BoxStream) {
        let conn = self.shared.next_conn.fetch_add(1, Ordering::Relaxed);
        let commands = self.shared.commands.clone();
        let mut stop = self.shared.shutdown.subscribe();
        tokio::spawn(async move {
            let (mut read, peer) = net::split(stream);
            if commands.send(Cmd::FrontendConnected { conn, peer: peer.clone() }).is_err() {
                return;
            }
            loop {
                let r = tokio::select! {
                    biased;
                    r = read_message(&mut read) => r,
                    _ = stop.wait_for(|s| *s) => break,
                };
                match r {
                    Ok(Some(message)) => {
                        if commands.send(Cmd::FrontendMessage { conn, message }).is_err() {
                            break;
                        }
                    }
                    Err(e @ (ProtocolError::MalformedBody(_) | ProtocolError::UnknownKind(_))) => {
                        peer.send(Message::error("protocol_error", e.to_string()));
                    }
                    Ok(None) | Err(_) => break,
                }
            }
            let _ = commands.send(Cmd::FrontendClosed { conn });
            peer.close();
        });
    }

    /// An in-process connector for front-ends.
    pub fn frontend_connector(&self) -> impl Connector + Clone {
        let node = self.clone();
        move || -> BoxFuture<io::Result<BoxStream>> {
            let node = node.clone();
            Box::pin(async move {
                if *node.shared.shutdown.borrow() {
                    return Err(io::Error::new(io::ErrorKind::ConnectionRefused, "user node is shut down"));
                }
                let (near, far) = tokio::io::duplex(1 << 16);
                node.attach_frontend(Box::new(far));
                Ok(Box::new(near) as BoxStream)
            })
        }
    }

    /// Every assignment submitted through this node since it started.
    pub async fn status(&self) -> Vec<PendingAssignment> {
        let (tx, rx) = oneshot::channel();
        let _ = self.shared.commands.send(Cmd::Status(tx));
        rx.await.unwrap_or_default()
    }

    pub async fn cloud_connected(&self) -> bool {
        let (tx, rx) = oneshot::channel();
        let _ = self.shared.commands.send(Cmd::CloudUp(tx));
        rx.await.unwrap_or(false)
    }

    /// Waits until the cloud link is up, polling every few milliseconds.
    pub async fn wait_for_cloud(&self, timeout: Duration) -> bool {
        let deadline = tokio::time::Instant::now() + timeout;
        while tokio::time::Instant::now() < deadline {
            if self.cloud_connected().await {
                return true;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        false
    }

    pub fn shutdown(&self) {
        self.shared.shutdown.send_replace(true);
    }
}

async fn cloud_link(
    connector: impl Connector,
    mut backoff: Backoff,
    commands: mpsc::UnboundedSender<Cmd>,
    mut stop: watch::Receiver<bool>,
) {
    let mut link = 0u64;
    loop {
        let connected = tokio::select! {
            c = connector.connect() => c,
            _ = stop.wait_for(|s| *s) => return,
        };
        if let Ok(stream) = connected {
            backoff.reset();
            link += 1;
            let (mut read, peer) = net::split(stream);
            if commands.send(Cmd::CloudConnected { link, peer: peer.clone() }).is_err() {
                return;
            }
            loop {
                let r = tokio::select! {
                    biased;
                    r = read_message(&mut read) => r,
                    _ = stop.wait_for(|s| *s) => {
                        peer.close();
                        return;
                    }
                };
                match r {
                    Ok(Some(message)) => {
                        if commands.send(Cmd::CloudMessage { link, message }).is_err() {
                            return;
                        }
                    }
                    Err(ProtocolError::MalformedBody(_) | ProtocolError::UnknownKind(_)) => continue,
                    Ok(None) | Err(_) => break,
                }
            }
            peer.close();
            let _ = commands.send(Cmd::CloudLost { link });
        }
        let delay = backoff.next_delay();
        tokio::select! {
            _ = tokio::time::sleep(delay) => {}
            _ = stop.wait_for(|s| *s) => return,
        }
    }
}
