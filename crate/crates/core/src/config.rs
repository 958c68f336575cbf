//! Cloud node configuration.
//!
//! The file format is plain `key = value` lines (a TOML subset); `#` starts
//! a comment. Every key may be overridden by an `OODIDA_<KEY>` environment
//! variable, e.g. `OODIDA_GRACE_PERIOD_MS=10000`.
//!
//! ```text
//! user_listen = "127.0.0.1:7700"
//! client_listen = "127.0.0.1:7701"
//! iteration_timeout_ms = 60000
//! grace_period_ms = 30000
//! heartbeat_interval_ms = 5000
//! heartbeat_misses = 3
//! count_selection = "lexicographic"   # or "seeded"
//! selection_seed = 0
//! event_log = "events.jsonl"
//! ```

use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid value {value:?} for {key}")]
    BadOverride { key: String, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountSelection {
    /// The n lexicographically smallest connected ids.
    Lexicographic,
    /// n connected ids drawn with a generator seeded per assignment and iteration.
    Seeded,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudConfig {
    pub user_listen: String,
    pub client_listen: String,
    pub iteration_timeout_ms: u64,
    pub grace_period_ms: u64,
    pub heartbeat_interval_ms: u64,
    pub heartbeat_misses: u32,
    pub count_selection: CountSelection,
    pub selection_seed: u64,
    pub event_log: Option<String>,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            user_listen: "127.0.0.1:7700".into(),
            client_listen: "127.0.0.1:7701".into(),
            iteration_timeout_ms: 60_000,
            grace_period_ms: 30_000,
            heartbeat_interval_ms: 5_000,
            heartbeat_misses: 3,
            count_selection: CountSelection::Lexicographic,
            selection_seed: 0,
            event_log: None,
        }
    }
}

impl CloudConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies `OODIDA_*` overrides from the process environment.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_overrides(std::env::vars())
    }

    pub fn apply_overrides(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (key, value) in vars {
            let Some(name) = key.strip_prefix("OODIDA_") else {
                continue;
            };
            let bad = || ConfigError::BadOverride {
                key: key.clone(),
                value: value.clone(),
            };
            match name.to_ascii_lowercase().as_str() {
                "user_listen" => self.user_listen = value.clone(),
                "client_listen" => self.client_listen = value.clone(),
                "iteration_timeout_ms" => self.iteration_timeout_ms = value.parse().map_err(|_| bad())?,
                "grace_period_ms" => self.grace_period_ms = value.parse().map_err(|_| bad())?,
                "heartbeat_interval_ms" => self.heartbeat_interval_ms = value.parse().map_err(|_| bad())?,
                "heartbeat_misses" => self.heartbeat_misses = value.parse().map_err(|_| bad())?,
                "selection_seed" => self.selection_seed = value.parse().map_err(|_| bad())?,
                "count_selection" => {
                    self.count_selection = match value.as_str() {
                        "lexicographic" => CountSelection::Lexicographic,
                        "seeded" => CountSelection::Seeded,
                        _ => return Err(bad()),
                    }
                }
                "event_log" => self.event_log = Some(value.clone()),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn iteration_timeout(&self) -> Duration {
        Duration::from_millis(self.iteration_timeout_ms)
    }

    pub fn grace_period(&self) -> Duration {
        Duration::from_millis(self.grace_period_ms)
    }

    pub fn heartbeat_interval(&self) -> Duration {
        Duration::from_millis(self.heartbeat_interval_ms)
    }

    /// Silence after which a client is declared lost.
    pub fn heartbeat_deadline(&self) -> Duration {
        self.heartbeat_interval() * self.heartbeat_misses.max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = CloudConfig::default();
        assert_eq!(c.iteration_timeout(), Duration::from_secs(60));
        assert_eq!(c.grace_period(), Duration::from_secs(30));
        assert_eq!(c.heartbeat_deadline(), Duration::from_secs(15));
    }

    #[test]
    fn parse_partial_file() {
        let c = CloudConfig::parse("# tuned\ngrace_period_ms = 100\ncount_selection = \"seeded\"\n").unwrap();
        assert_eq!(c.grace_period_ms, 100);
        assert_eq!(c.count_selection, CountSelection::Seeded);
        assert_eq!(c.heartbeat_misses, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(CloudConfig::parse("grace = 1").is_err());
    }

    #[test]
    fn env_overrides() {
        let mut c = CloudConfig::default();
        c.apply_overrides([
            ("OODIDA_GRACE_PERIOD_MS".to_owned(), "42".to_owned()),
            ("OODIDA_USER_LISTEN".to_owned(), "0.0.0.0:1".to_owned()),
            ("PATH".to_owned(), "/bin".to_owned()),
        ])
        .unwrap();
        assert_eq!(c.grace_period_ms, 42);
        assert_eq!(c.user_listen, "0.0.0.0:1");
        assert!(c
            .apply_overrides([("OODIDA_HEARTBEAT_MISSES".to_owned(), "x".to_owned())])
            .is_err());
    }
}
