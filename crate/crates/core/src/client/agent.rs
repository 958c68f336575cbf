use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;
use tokio::sync::{mpsc, watch};
use tokio::task::{AbortHandle, JoinHandle, JoinSet};

use super::executor::{Executor, ExecutorMode};
use super::source::{DataSource, SourceConfig, SourceHandle};
use crate::net::{self, Backoff, BoxStream, Connector, Peer};
use crate::protocol::{read_message, AssignmentId, ClientId, Message, ProtocolError, TaskResult, TaskSpec};

#[derive(Debug, Clone)]
pub enum DataConfig {
    Synthetic(SourceConfig),
    Replay(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub client_id: ClientId,
    pub seed: u64,
    pub data: DataConfig,
    pub executor: ExecutorMode,
    pub heartbeat_interval: Duration,
    pub reconnect_base: Duration,
    pub reconnect_cap: Duration,
    /// Delay added before every task.
    pub simulated_latency: Option<Duration>,
}

impl ClientConfig {
    pub fn new(client_id: impl Into<ClientId>) -> Self {
        Self {
            client_id: client_id.into(),
            seed: 0,
            data: DataConfig::Synthetic(SourceConfig::default()),
            executor: ExecutorMode::Builtin,
            heartbeat_interval: Duration::from_secs(5),
            reconnect_base: Duration::from_secs(1),
            reconnect_cap: Duration::from_secs(30),
            simulated_latency: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.client_id.as_str().trim().is_empty() {
            return Err(ClientError::FatalConfig("client id must be nonempty".into()));
        }
        if let ExecutorMode::External { command } = &self.executor {
            if command.trim().is_empty() {
                return Err(ClientError::FatalConfig("external executor command is empty".into()));
            }
        }
        if self.heartbeat_interval.is_zero() || self.reconnect_base.is_zero() {
            return Err(ClientError::FatalConfig("intervals must be positive".into()));
        }
        Ok(())
    }
}

impl From<String> for ClientId {
    fn from(s: String) -> Self {
        ClientId::new(s)
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("fatal configuration error: {0}")]
    FatalConfig(String),
}

/// Observable agent transitions, for tests and the harness.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentEvent {
    Connected,
    Disconnected,
    TaskStarted { assignment_id: AssignmentId, iteration: u32 },
    TaskCompleted { assignment_id: AssignmentId, iteration: u32 },
    TaskFailed { assignment_id: AssignmentId, iteration: u32, detail: String },
    TaskCancelled { assignment_id: AssignmentId },
}

#[derive(Debug, Default)]
pub struct AgentStats {
    pub connections: AtomicU64,
    pub tasks_started: AtomicU64,
    pub tasks_completed: AtomicU64,
    pub tasks_failed: AtomicU64,
    pub tasks_cancelled: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AgentStatsSnapshot {
    pub connections: u64,
    pub tasks_started: u64,
    pub tasks_completed: u64,
    pub tasks_failed: u64,
    pub tasks_cancelled: u64,
}

impl AgentStats {
    pub fn snapshot(&self) -> AgentStatsSnapshot {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        AgentStatsSnapshot {
            connections: get(&self.connections),
            tasks_started: get(&self.tasks_started),
            tasks_completed: get(&self.tasks_completed),
            tasks_failed: get(&self.tasks_failed),
            tasks_cancelled: get(&self.tasks_cancelled),
        }
    }
}

#[derive(Clone)]
struct Ctx {
    config: Arc<ClientConfig>,
    executor: Executor,
    stats: Arc<AgentStats>,
    events: Option<mpsc::UnboundedSender<AgentEvent>>,
    in_flight: Arc<Mutex<usize>>,
}

impl Ctx {
    fn emit(&self, e: AgentEvent) {
        if let Some(tx) = &self.events {
            let _ = tx.send(e);
        }
    }
}

/// A running client agent.
pub struct Agent {
    client_id: ClientId,
    stats: Arc<AgentStats>,
    in_flight: Arc<Mutex<usize>>,
    stop: watch::Sender<bool>,
    join: Option<JoinHandle<()>>,
}

impl Agent {
    pub fn spawn(config: ClientConfig, connector: impl Connector) -> Result<Self, ClientError> {
        Self::start(config, connector, None)
    }

    /// Like [`Agent::spawn`], also returning a stream of [`AgentEvent`]s.
    pub fn spawn_observed(
        config: ClientConfig,
        connector: impl Connector,
    ) -> Result<(Self, mpsc::UnboundedReceiver<AgentEvent>), ClientError> {
        let (tx, rx) = mpsc::unbounded_channel();
        Ok((Self::start(config, connector, Some(tx))?, rx))
    }

    fn start(
        config: ClientConfig,
        connector: impl Connector,
        events: Option<mpsc::UnboundedSender<AgentEvent>>,
    ) -> Result<Self, ClientError> {
        config.validate()?;
        let source = match &config.data {
            DataConfig::Synthetic(s) => DataSource::synthetic(s.clone(), config.seed),
            DataConfig::Replay(path) => DataSource::replay(path).map_err(|e| ClientError::FatalConfig(e.to_string()))?,
        };
        let executor = Executor {
            mode: config.executor.clone(),
            client_id: config.client_id.clone(),
            seed: config.seed,
            source: SourceHandle::spawn(source),
            simulated_latency: config.simulated_latency,
        };
        let stats = Arc::new(AgentStats::default());
        let in_flight = Arc::new(Mutex::new(0));
        let ctx = Ctx {
            config: Arc::new(config),
            executor,
            stats: stats.clone(),
            events,
            in_flight: in_flight.clone(),
        };
        let (stop, stop_rx) = watch::channel(false);
        let client_id = ctx.config.client_id.clone();
        let join = tokio::spawn(run(ctx, connector, stop_rx));
        Ok(Self {
            client_id,
            stats,
            in_flight,
            stop,
            join: Some(join),
        })
    }

    pub fn client_id(&self) -> &ClientId {
        &self.client_id
    }

    pub fn stats(&self) -> AgentStatsSnapshot {
        self.stats.snapshot()
    }

    /// Task handlers currently alive.
    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().expect("in-flight counter poisoned")
    }

    /// Drops the connection and every running task; the agent then exits.
    pub fn stop(&self) {
        self.stop.send_replace(true);
    }

    /// Waits until the agent has exited.
    pub async fn stopped(mut self) {
        if let Some(join) = self.join.take() {
            let _ = join.await;
        }
    }

    pub fn is_finished(&self) -> bool {
        self.join.as_ref().is_none_or(|j| j.is_finished())
    }
}

impl Drop for Agent {
    fn drop(&mut self) {
        self.stop.send_replace(true);
    }
}

/// Runs an agent until it is stopped. Only configuration errors are fatal;
/// connection failures are retried with exponential backoff.
pub async fn run_agent(config: ClientConfig, connector: impl Connector) -> Result<(), ClientError> {
    Agent::spawn(config, connector)?.stopped().await;
    Ok(())
}

async fn run(ctx: Ctx, connector: impl Connector, mut stop: watch::Receiver<bool>) {
    let mut backoff = Backoff::new(ctx.config.reconnect_base, ctx.config.reconnect_cap);
    loop {
        let connected = tokio::select! {
            c = connector.connect() => c,
            _ = stop.wait_for(|s| *s) => return,
        };
        match connected {
            Ok(stream) => {
                backoff.reset();
                if let End::Stopped = session(stream, &ctx, &mut stop).await {
                    return;
                }
                tracing::info!(client = %ctx.config.client_id, "connection to cloud lost");
            }
            Err(e) => {
                tracing::debug!(client = %ctx.config.client_id, error = %e, "cannot reach cloud");
            }
        }
        let delay = backoff.next_delay();
        tokio::select! {
            _ = tokio::time::sleep(delay) => {}
            _ = stop.wait_for(|s| *s) => return,
        }
    }
}

enum End {
    Lost,
    Stopped,
}

fn spawn_reader(stream: net::Reader) -> (JoinHandle<()>, mpsc::UnboundedReceiver<Message>) {
    let (tx, rx) = mpsc::unbounded_channel();
    let handle = tokio::spawn(async move {
        let mut read = stream;
        loop {
            match read_message(&mut read).await {
                Ok(Some(m)) => {
                    if tx.send(m).is_err() {
                        break;
                    }
                }
                Err(e @ (ProtocolError::MalformedBody(_) | ProtocolError::UnknownKind(_))) => {
                    tracing::warn!(error = %e, "ignoring undecodable frame from cloud");
                }
                Ok(None) | Err(_) => break,
            }
        }
    });
    (handle, rx)
}

async fn session(stream: BoxStream, ctx: &Ctx, stop: &mut watch::Receiver<bool>) -> End {
    let (read, peer) = net::split(stream);
    let (reader, mut inbox) = spawn_reader(read);
    let me = ctx.config.client_id.clone();
    peer.send(Message::RegisterClient { client_id: me.clone() });
    ctx.stats.connections.fetch_add(1, Ordering::Relaxed);
    ctx.emit(AgentEvent::Connected);

    let mut heartbeat = tokio::time::interval(ctx.config.heartbeat_interval);
    heartbeat.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    heartbeat.tick().await;
    let mut tasks = JoinSet::new();
    let mut running: HashMap<tokio::task::Id, (AssignmentId, AbortHandle)> = HashMap::new();

    let end = loop {
        tokio::select! {
            biased;
            m = inbox.recv() => match m {
                Some(Message::AssignTask { target, task }) => {
                    if target != me {
                        tracing::warn!(%target, "task addressed to another client");
                        continue;
                    }
                    let id = task.assignment_id.clone();
                    let handle = tasks.spawn(handle_task(task, ctx.clone(), peer.clone()));
                    running.insert(handle.id(), (id, handle));
                }
                Some(Message::Cancel { assignment_id }) => {
                    let doomed: Vec<tokio::task::Id> = running
                        .iter()
                        .filter(|(_, (a, _))| *a == assignment_id)
                        .map(|(id, _)| *id)
                        .collect();
                    for id in doomed {
                        if let Some((_, h)) = running.remove(&id) {
                            h.abort();
                            ctx.stats.tasks_cancelled.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                    ctx.emit(AgentEvent::TaskCancelled { assignment_id });
                }
                Some(Message::Error { code, detail, .. }) => {
                    tracing::warn!(%code, %detail, "cloud reported an error");
                }
                Some(other) => {
                    tracing::debug!(kind = other.kind_name(), "ignoring message");
                }
                None => break End::Lost,
            },
            _ = heartbeat.tick() => {
                peer.send(Message::Heartbeat { client_id: me.clone() });
            }
            Some(done) = tasks.join_next_with_id() => {
                let id = match done {
                    Ok((id, ())) => id,
                    Err(e) => e.id(),
                };
                running.remove(&id);
            }
            _ = peer.closed() => break End::Lost,
            _ = stop.wait_for(|s| *s) => break End::Stopped,
        }
    };
    reader.abort();
    tasks.abort_all();
    peer.close();
    ctx.emit(AgentEvent::Disconnected);
    end
}

struct InFlight(Arc<Mutex<usize>>);

impl InFlight {
    fn enter(counter: &Arc<Mutex<usize>>) -> Self {
        *counter.lock().expect("in-flight counter poisoned") += 1;
        Self(counter.clone())
    }
}

impl Drop for InFlight {
    fn drop(&mut self) {
        if let Ok(mut n) = self.0.lock() {
            *n -= 1;
        }
    }
}

/// One task handler: executes, sends its result straight back over the
/// shared connection and ends.
async fn handle_task(task: TaskSpec, ctx: Ctx, peer: Peer) {
    let _guard = InFlight::enter(&ctx.in_flight);
    let (assignment_id, iteration) = (task.assignment_id.clone(), task.iteration);
    ctx.stats.tasks_started.fetch_add(1, Ordering::Relaxed);
    ctx.emit(AgentEvent::TaskStarted {
        assignment_id: assignment_id.clone(),
        iteration,
    });
    match ctx.executor.execute(&task).await {
        Ok(body) => {
            peer.send(Message::Result {
                result: TaskResult {
                    assignment_id: assignment_id.clone(),
                    iteration,
                    client_id: ctx.config.client_id.clone(),
                    body,
                },
            });
            ctx.stats.tasks_completed.fetch_add(1, Ordering::Relaxed);
            ctx.emit(AgentEvent::TaskCompleted {
                assignment_id,
                iteration,
            });
        }
        Err(e) => {
            let detail = e.to_string();
            peer.send(Message::Error {
                code: "executor_failure".into(),
                detail: detail.clone(),
                assignment_id: Some(assignment_id.clone()),
                iteration: Some(iteration),
                client_id: Some(ctx.config.client_id.clone()),
            });
            ctx.stats.tasks_failed.fetch_add(1, Ordering::Relaxed);
            ctx.emit(AgentEvent::TaskFailed {
                assignment_id,
                iteration,
                detail,
            });
        }
    }
}
