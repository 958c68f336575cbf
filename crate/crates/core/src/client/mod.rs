//! The client agent: keeps a connection to the cloud, spawns one task
//! handler per incoming task and sends each result straight back.

mod agent;
pub mod executor;
pub mod external;
pub mod source;

pub use agent::{run_agent, Agent, AgentEvent, AgentStats, AgentStatsSnapshot, ClientConfig, ClientError, DataConfig};
pub use executor::{compute, dummy_body, task_seed, Executor, ExecutorError, ExecutorMode, ExternalTask};
pub use external::{parse_child_output, run_external};
pub use source::{signal_seed, DataSource, SignalModel, SignalSample, SourceConfig, SourceError, SourceHandle};
