//! Per-signal data sources: seeded synthetic generators and CSV replay.
//!
//! A [`DataSource`] is owned by a single activity ([`SourceHandle::spawn`]);
//! task handlers request aligned batches over several signals by message.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{mpsc, oneshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSample {
    pub signal: String,
    pub value: f64,
    pub timestamp: f64,
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("unknown signal {0:?}")]
    UnknownSignal(String),
    #[error("cannot read replay file: {0}")]
    Replay(String),
    #[error("invalid signal model for {signal:?}: {detail}")]
    BadModel { signal: String, detail: String },
    #[error("data source is gone")]
    Closed,
}

/// Generator parameters for one synthetic signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalModel {
    /// `v_{t+1} = clamp(v_t + step, min, max)` with `step ~ N(drift, step_sd)`.
    RandomWalk {
        start: f64,
        #[serde(default)]
        drift: f64,
        step_sd: f64,
        #[serde(default)]
        min: f64,
        #[serde(default = "default_max")]
        max: f64,
    },
    Gaussian { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    /// `weights[0] + Σ weights[i+1]·inputs[i] + N(0, noise_sd)`, drawn in
    /// lockstep with the input signals.
    Linear {
        inputs: Vec<String>,
        weights: Vec<f64>,
        #[serde(default)]
        noise_sd: f64,
    },
}

fn default_max() -> f64 {
    200.0
}

impl SignalModel {
    /// Velocity in km/h: a driftless walk starting at 50 with 0.5 km/h steps.
    pub fn velocity() -> Self {
        SignalModel::RandomWalk {
            start: 50.0,
            drift: 0.0,
            step_sd: 0.5,
            min: 0.0,
            max: 200.0,
        }
    }
}

/// Models per signal; signals without an entry use `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    #[serde(default = "SignalModel::velocity")]
    pub default: SignalModel,
    #[serde(default)]
    pub signals: BTreeMap<String, SignalModel>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            default: SignalModel::velocity(),
            signals: BTreeMap::new(),
        }
    }
}

impl SourceConfig {
    pub fn parse(text: &str) -> Result<Self, SourceError> {
        toml::from_str(text).map_err(|e| SourceError::BadModel {
            signal: "*".into(),
            detail: e.to_string(),
        })
    }

    /// The `x`/`y` pair used by the federated examples:
    /// `x ~ N(0, 1)` and `y = intercept + slope·x + N(0, noise_sd)`.
    pub fn linear_pair(intercept: f64, slope: f64, noise_sd: f64) -> Self {
        let mut signals = BTreeMap::new();
        signals.insert("x".into(), SignalModel::Gaussian { mean: 0.0, sd: 1.0 });
        signals.insert(
            "y".into(),
            SignalModel::Linear {
                inputs: vec!["x".into()],
                weights: vec![intercept, slope],
                noise_sd,
            },
        );
        Self {
            default: SignalModel::velocity(),
            signals,
        }
    }

    fn model(&self, signal: &str) -> &SignalModel {
        self.signals.get(signal).unwrap_or(&self.default)
    }
}

/// Seed of one signal's generator. Stable across runs and platforms.
pub fn signal_seed(seed: u64, signal: &str) -> u64 {
    splitmix(seed ^ fnv1a(signal))
}

pub(crate) fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
enum Generator {
    Walk {
        v: f64,
        step: Normal<f64>,
        min: f64,
        max: f64,
        rng: ChaCha8Rng,
    },
    Gaussian(Normal<f64>, ChaCha8Rng),
    Uniform(Uniform<f64>, ChaCha8Rng),
    Linear {
        inputs: Vec<Generator>,
        weights: Vec<f64>,
        noise: Normal<f64>,
        rng: ChaCha8Rng,
    },
}

impl Generator {
    fn build(config: &SourceConfig, seed: u64, signal: &str, depth: usize) -> Result<Self, SourceError> {
        let bad = |detail: &str| SourceError::BadModel {
            signal: signal.to_owned(),
            detail: detail.to_owned(),
        };
        let rng = ChaCha8Rng::seed_from_u64(signal_seed(seed, signal));
        Ok(match config.model(signal) {
            SignalModel::RandomWalk {
                start,
                drift,
                step_sd,
                min,
                max,
            } => {
                if !(min < max) {
                    return Err(bad("min must be below max"));
                }
                Generator::Walk {
                    v: start.clamp(*min, *max),
                    step: Normal::new(*drift, *step_sd).map_err(|e| bad(&e.to_string()))?,
                    min: *min,
                    max: *max,
                    rng,
                }
            }
            SignalModel::Gaussian { mean, sd } => {
                Generator::Gaussian(Normal::new(*mean, *sd).map_err(|e| bad(&e.to_string()))?, rng)
            }
            SignalModel::Uniform { low, high } => {
                Generator::Uniform(Uniform::new(*low, *high).map_err(|e| bad(&e.to_string()))?, rng)
            }
            SignalModel::Linear {
                inputs,
                weights,
                noise_sd,
            } => {
                if depth > 8 {
                    return Err(bad("derived signals nest too deeply or form a cycle"));
                }
                if weights.len() != inputs.len() + 1 {
                    return Err(bad("weights must hold an intercept plus one weight per input"));
                }
                let inputs = inputs
                    .iter()
                    .map(|i| Generator::build(config, seed, i, depth + 1))
                    .collect::<Result<_, _>>()?;
                Generator::Linear {
                    inputs,
                    weights: weights.clone(),
                    noise: Normal::new(0.0, *noise_sd).map_err(|e| bad(&e.to_string()))?,
                    rng,
                }
            }
        })
    }

    fn next(&mut self) -> f64 {
        match self {
            Generator::Walk { v, step, min, max, rng } => {
                let out = *v;
                *v = (*v + step.sample(rng)).clamp(*min, *max);
                out
            }
            Generator::Gaussian(d, rng) => d.sample(rng),
            Generator::Uniform(d, rng) => d.sample(rng),
            Generator::Linear {
                inputs,
                weights,
                noise,
                rng,
            } => {
                let mut y = weights[0];
                for (g, w) in inputs.iter_mut().zip(&weights[1..]) {
                    y += w * g.next();
                }
                y + noise.sample(rng)
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Replay {
    rows: Vec<(f64, f64)>,
    cursor: usize,
    /// Added to timestamps after each wrap so they keep increasing.
    offset: f64,
}

impl Replay {
    fn next(&mut self, signal: &str) -> (f64, f64) {
        if self.cursor == self.rows.len() {
            let first = self.rows[0].0;
            let last = self.rows[self.rows.len() - 1].0;
            let step = if self.rows.len() > 1 {
                (last - first) / (self.rows.len() - 1) as f64
            } else {
                1.0
            };
            self.offset += last - first + step.max(f64::MIN_POSITIVE);
            self.cursor = 0;
            tracing::warn!(signal, rows = self.rows.len(), "replay exhausted, wrapping around");
        }
        let (t, v) = self.rows[self.cursor];
        self.cursor += 1;
        (t + self.offset, v)
    }
}

#[derive(Debug, Clone)]
enum Stream {
    Synthetic { gen: Generator, t: u64 },
    Replay(Replay),
}

/// Deterministic per-signal sample streams.
#[derive(Debug, Clone)]
pub struct DataSource {
    streams: HashMap<String, Stream>,
    config: SourceConfig,
    seed: u64,
    replay_only: bool,
}

#[derive(Debug, Deserialize)]
struct ReplayRow {
    timestamp: f64,
    signal: String,
    value: f64,
}

impl DataSource {
    pub fn synthetic(config: SourceConfig, seed: u64) -> Self {
        Self {
            streams: HashMap::new(),
            config,
            seed,
            replay_only: false,
        }
    }

    /// Replays a `timestamp,signal,value` CSV file (header required).
    pub fn replay(path: &Path) -> Result<Self, SourceError> {
        let text = std::fs::read_to_string(path).map_err(|e| SourceError::Replay(e.to_string()))?;
        Self::replay_from_str(&text)
    }

    pub fn replay_from_str(text: &str) -> Result<Self, SourceError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| SourceError::Replay(e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["timestamp", "signal", "value"] {
            return Err(SourceError::Replay("header must be timestamp,signal,value".into()));
        }
        let mut rows: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for (i, rec) in reader.deserialize::<ReplayRow>().enumerate() {
            let row = rec.map_err(|e| SourceError::Replay(format!("row {}: {e}", i + 1)))?;
            if !row.value.is_finite() || !row.timestamp.is_finite() {
                return Err(SourceError::Replay(format!("row {}: non-finite number", i + 1)));
            }
            rows.entry(row.signal).or_default().push((row.timestamp, row.value));
        }
        let streams = rows
            .into_iter()
            .map(|(signal, mut rows)| {
                rows.sort_by(|a, b| a.0.total_cmp(&b.0));
                let replay = Replay {
                    rows,
                    cursor: 0,
                    offset: 0.0,
                };
                (signal, Stream::Replay(replay))
            })
            .collect();
        Ok(Self {
            streams,
            config: SourceConfig::default(),
            seed: 0,
            replay_only: true,
        })
    }

    fn stream(&mut self, signal: &str) -> Result<&mut Stream, SourceError> {
        if !self.streams.contains_key(signal) {
            if self.replay_only {
                return Err(SourceError::UnknownSignal(signal.to_owned()));
            }
            let gen = Generator::build(&self.config, self.seed, signal, 0)?;
            self.streams.insert(signal.to_owned(), Stream::Synthetic { gen, t: 0 });
        }
        Ok(self.streams.get_mut(signal).expect("inserted above"))
    }

    /// The next `n` samples of one signal.
    pub fn next_samples(&mut self, signal: &str, n: usize) -> Result<Vec<SignalSample>, SourceError> {
        let stream = self.stream(signal)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let (timestamp, value) = match stream {
                Stream::Synthetic { gen, t } => {
                    let s = (*t as f64, gen.next());
                    *t += 1;
                    s
                }
                Stream::Replay(r) => r.next(signal),
            };
            out.push(SignalSample {
                signal: signal.to_owned(),
                value,
                timestamp,
            });
        }
        Ok(out)
    }

    /// The next `n` values of each signal, taken together.
    pub fn next_batch(&mut self, signals: &[String], n: usize) -> Result<Vec<Vec<SignalSample>>, SourceError> {
        signals.iter().map(|s| self.next_samples(s, n)).collect()
    }
}

enum Request {
    Batch {
        signals: Vec<String>,
        n: usize,
        reply: oneshot::Sender<Result<Vec<Vec<SignalSample>>, SourceError>>,
    },
}

/// Message interface to a data source owned by its own activity.
#[derive(Clone)]
pub struct SourceHandle {
    tx: mpsc::UnboundedSender<Request>,
}

impl SourceHandle {
    pub fn spawn(mut source: DataSource) -> Self {
        let (tx, mut rx) = mpsc::unbounded_channel();
        tokio::spawn(async move {
            while let Some(Request::Batch { signals, n, reply }) = rx.recv().await {
                let _ = reply.send(source.next_batch(&signals, n));
            }
        });
        Self { tx }
    }

    pub async fn batch(&self, signals: &[String], n: usize) -> Result<Vec<Vec<SignalSample>>, SourceError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Request::Batch {
                signals: signals.to_vec(),
                n,
                reply,
            })
            .map_err(|_| SourceError::Closed)?;
        rx.await.map_err(|_| SourceError::Closed)?
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(s: &[SignalSample]) -> Vec<f64> {
        s.iter().map(|x| x.value).collect()
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = DataSource::synthetic(SourceConfig::default(), 7);
        let mut b = DataSource::synthetic(SourceConfig::default(), 7);
        assert_eq!(values(&a.next_samples("v", 5).unwrap()), values(&b.next_samples("v", 5).unwrap()));
        let mut c = DataSource::synthetic(SourceConfig::default(), 8);
        assert_ne!(values(&a.next_samples("v", 5).unwrap()), values(&c.next_samples("v", 5).unwrap()));
    }

    #[test]
    fn walk_stays_in_bounds_and_timestamps_increase() {
        let config = SourceConfig {
            default: SignalModel::RandomWalk {
                start: 190.0,
                drift: 0.0,
                step_sd: 20.0,
                min: 0.0,
                max: 200.0,
            },
            signals: BTreeMap::new(),
        };
        let mut src = DataSource::synthetic(config, 1);
        let s = src.next_samples("v", 100_000).unwrap();
        assert!(s.iter().all(|x| (0.0..=200.0).contains(&x.value)));
        assert!(s.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn mean_step_matches_drift() {
        // far from the walls the clamp never binds
        let (drift, sd, n) = (0.01, 0.5, 1_000_000usize);
        let config = SourceConfig {
            default: SignalModel::RandomWalk {
                start: 0.0,
                drift,
                step_sd: sd,
                min: -1e12,
                max: 1e12,
            },
            signals: BTreeMap::new(),
        };
        let mut src = DataSource::synthetic(config, 3);
        let v = values(&src.next_samples("v", n + 1).unwrap());
        let mean_step = (v[n] - v[0]) / n as f64;
        assert!((mean_step - drift).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean_step}");
    }

    #[test]
    fn derived_signal_tracks_its_input() {
        let mut src = DataSource::synthetic(SourceConfig::linear_pair(1.0, 2.0, 0.0), 11);
        let batch = src.next_batch(&["x".into(), "y".into()], 50).unwrap();
        for (x, y) in batch[0].iter().zip(&batch[1]) {
            assert!((y.value - (1.0 + 2.0 * x.value)).abs() < 1e-12);
        }
        // a second batch stays aligned
        let batch = src.next_batch(&["x".into(), "y".into()], 50).unwrap();
        for (x, y) in batch[0].iter().zip(&batch[1]) {
            assert!((y.value - (1.0 + 2.0 * x.value)).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_wraps_around() {
        let csv = "timestamp,signal,value\n0,v,1\n1,v,2\n2,v,3\n0,w,9\n";
        let mut src = DataSource::replay_from_str(csv).unwrap();
        let s = src.next_samples("v", 7).unwrap();
        assert_eq!(values(&s), [1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
        assert!(s.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert!(matches!(src.next_samples("nope", 1), Err(SourceError::UnknownSignal(_))));
        assert!(DataSource::replay_from_str("a,b,c\n1,2,3\n").is_err());
    }

    #[test]
    fn source_config_parses() {
        let text = r#"
            [default]
            kind = "gaussian"
            mean = 0.0
            sd = 1.0

            [signals.y]
            kind = "linear"
            inputs = ["x"]
            weights = [1.0, 2.0]
            noise_sd = 0.1
        "#;
        let c = SourceConfig::parse(text).unwrap();
        assert_eq!(c.default, SignalModel::Gaussian { mean: 0.0, sd: 1.0 });
        assert!(matches!(c.signals["y"], SignalModel::Linear { .. }));
    }

    #[tokio::test]
    async fn handle_serves_batches() {
        let h = SourceHandle::spawn(DataSource::synthetic(SourceConfig::default(), 1));
        let mut direct = DataSource::synthetic(SourceConfig::default(), 1);
        let got = h.batch(&["v".into()], 10).await.unwrap();
        assert_eq!(values(&got[0]), values(&direct.next_samples("v", 10).unwrap()));
    }
}
