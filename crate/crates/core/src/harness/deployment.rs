//! A complete desk-scale deployment in one process: cloud, user node and
//! any number of client agents, wired either in-process or over loopback TCP.

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::client::{Agent, AgentEvent, ClientConfig, ClientError};
use crate::cloud::Cloud;
use crate::config::CloudConfig;
use crate::events::EventLog;
use crate::net::{BoxFuture, BoxStream, Connector, SharedConnector, TcpConnector};
use crate::protocol::ClientId;
use crate::user::{FrontendClient, UserConfig, UserNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    InProcess,
    LoopbackTcp,
}

impl std::str::FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "in_process" | "in-process" => Ok(Transport::InProcess),
            "loopback_tcp" | "tcp" => Ok(Transport::LoopbackTcp),
            _ => Err(format!("unknown transport {s:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeploymentConfig {
    pub cloud: CloudConfig,
    pub user: UserConfig,
    pub transport: Transport,
}

impl DeploymentConfig {
    /// Short timers suited to tests; listeners on ephemeral ports.
    pub fn local(transport: Transport) -> Self {
        let cloud = CloudConfig {
            user_listen: "127.0.0.1:0".into(),
            client_listen: "127.0.0.1:0".into(),
            ..CloudConfig::default()
        };
        let user = UserConfig {
            reconnect_base: Duration::from_millis(50),
            reconnect_cap: Duration::from_millis(500),
            ..UserConfig::default()
        };
        Self { cloud, user, transport }
    }
}

#[derive(Clone)]
struct CloudSlot(Arc<Mutex<Cloud>>);

impl CloudSlot {
    fn get(&self) -> Cloud {
        self.0.lock().expect("cloud slot poisoned").clone()
    }
}

struct Addrs {
    user: SocketAddr,
    client: SocketAddr,
}

pub struct LocalDeployment {
    config: DeploymentConfig,
    cloud: CloudSlot,
    events: EventLog,
    addrs: Option<Addrs>,
    pub user: UserNode,
    user_addr: Option<SocketAddr>,
    client_connector: SharedConnector,
    agents: BTreeMap<ClientId, (ClientConfig, Option<Agent>)>,
}

impl LocalDeployment {
    pub async fn start(config: DeploymentConfig) -> io::Result<Self> {
        Self::start_with_events(config, EventLog::new()).await
    }

    pub async fn start_with_events(config: DeploymentConfig, events: EventLog) -> io::Result<Self> {
        match config.transport {
            Transport::InProcess => {
                let cloud = CloudSlot(Arc::new(Mutex::new(Cloud::start(config.cloud.clone(), events.clone()))));
                let user = UserNode::start(config.user.clone(), slot_connector(cloud.clone(), true));
                Ok(Self {
                    client_connector: SharedConnector::new(slot_connector(cloud.clone(), false)),
                    config,
                    cloud,
                    events,
                    addrs: None,
                    user,
                    user_addr: None,
                    agents: BTreeMap::new(),
                })
            }
            Transport::LoopbackTcp => {
                let server = Cloud::bind(config.cloud.clone(), events.clone()).await?;
                let addrs = Addrs {
                    user: server.user_addr,
                    client: server.client_addr,
                };
                let (user, user_addr) =
                    UserNode::bind(config.user.clone(), TcpConnector::new(addrs.user.to_string()), "127.0.0.1:0").await?;
                Ok(Self {
                    client_connector: SharedConnector::new(TcpConnector::new(addrs.client.to_string())),
                    config,
                    cloud: CloudSlot(Arc::new(Mutex::new(server.cloud))),
                    events,
                    addrs: Some(addrs),
                    user,
                    user_addr: Some(user_addr),
                    agents: BTreeMap::new(),
                })
            }
        }
    }

    pub fn cloud(&self) -> Cloud {
        self.cloud.get()
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn transport(&self) -> Transport {
        self.config.transport
    }

    pub fn cloud_config(&self) -> &CloudConfig {
        &self.config.cloud
    }

    /// Connector client agents use to reach the cloud.
    pub fn client_connector(&self) -> SharedConnector {
        self.client_connector.clone()
    }

    pub fn add_client(&mut self, config: ClientConfig) -> Result<(), ClientError> {
        let agent = Agent::spawn(config.clone(), self.client_connector.clone())?;
        self.agents.insert(config.client_id.clone(), (config, Some(agent)));
        Ok(())
    }

    pub fn add_client_observed(
        &mut self,
        config: ClientConfig,
    ) -> Result<tokio::sync::mpsc::UnboundedReceiver<AgentEvent>, ClientError> {
        let (agent, rx) = Agent::spawn_observed(config.clone(), self.client_connector.clone())?;
        self.agents.insert(config.client_id.clone(), (config, Some(agent)));
        Ok(rx)
    }

    /// Adds `n` clients named `c000`, `c001`, ... configured by `make`.
    pub fn add_clients(&mut self, n: usize, make: impl Fn(usize, ClientId) -> ClientConfig) -> Result<(), ClientError> {
        for i in 0..n {
            let id = ClientId::new(format!("c{i:03}"));
            self.add_client(make(i, id))?;
        }
        Ok(())
    }

    pub fn agent(&self, id: &ClientId) -> Option<&Agent> {
        self.agents.get(id).and_then(|(_, a)| a.as_ref())
    }

    /// Stops a client agent, dropping its connection and running tasks.
    pub fn kill_client(&mut self, id: &ClientId) -> bool {
        match self.agents.get_mut(id).and_then(|(_, a)| a.take()) {
            Some(agent) => {
                agent.stop();
                true
            }
            None => false,
        }
    }

    /// Starts a previously killed client again with its original config.
    pub fn restart_client(&mut self, id: &ClientId) -> Result<bool, ClientError> {
        let Some((config, slot)) = self.agents.get_mut(id) else {
            return Ok(false);
        };
        if slot.is_some() {
            return Ok(false);
        }
        *slot = Some(Agent::spawn(config.clone(), self.client_connector.clone())?);
        Ok(true)
    }

    /// Polls until at least `n` clients are registered.
    pub async fn wait_for_clients(&self, n: usize, timeout: Duration) -> bool {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            if self.cloud().connected_clients().await.len() >= n {
                return true;
            }
            if tokio::time::Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }

    /// Opens a new front-end connection to the user node.
    pub async fn frontend(&self) -> io::Result<FrontendClient> {
        let client = match self.user_addr {
            Some(addr) => FrontendClient::connect(&TcpConnector::new(addr.to_string())).await?,
            None => FrontendClient::connect(&self.user.frontend_connector()).await?,
        };
        Ok(client)
    }

    /// Waits until the user node's cloud link is up.
    pub async fn ready(&self, timeout: Duration) -> bool {
        self.user.wait_for_cloud(timeout).await
    }

    /// Shuts the cloud down and starts a fresh one in its place, on the same
    /// ports for TCP. Assignment state is lost; agents and the user node
    /// reconnect on their own.
    pub async fn restart_cloud(&mut self) -> io::Result<()> {
        self.cloud.get().shutdown();
        match &self.addrs {
            None => {
                let fresh = Cloud::start(self.config.cloud.clone(), self.events.clone());
                *self.cloud.0.lock().expect("cloud slot poisoned") = fresh;
            }
            Some(addrs) => {
                let config = CloudConfig {
                    user_listen: addrs.user.to_string(),
                    client_listen: addrs.client.to_string(),
                    ..self.config.cloud.clone()
                };
                let mut attempts = 0;
                let server = loop {
                    match Cloud::bind(config.clone(), self.events.clone()).await {
                        Ok(s) => break s,
                        Err(e) if attempts < 100 => {
                            attempts += 1;
                            tracing::debug!(error = %e, "port still busy, retrying");
                            tokio::time::sleep(Duration::from_millis(20)).await;
                        }
                        Err(e) => return Err(e),
                    }
                };
                *self.cloud.0.lock().expect("cloud slot poisoned") = server.cloud;
            }
        }
        Ok(())
    }

    pub async fn shutdown(mut self) {
        for (_, (_, agent)) in std::mem::take(&mut self.agents) {
            if let Some(a) = agent {
                a.stop();
                a.stopped().await;
            }
        }
        self.user.shutdown();
        self.cloud.get().shutdown();
    }
}

fn slot_connector(slot: CloudSlot, user: bool) -> impl Connector + Clone {
    move || -> BoxFuture<io::Result<BoxStream>> {
        let cloud = slot.get();
        Box::pin(async move {
            if user {
                cloud.user_connector().connect().await
            } else {
                cloud.client_connector().connect().await
            }
        })
    }
}
