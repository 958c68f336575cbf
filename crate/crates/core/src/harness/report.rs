use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p/100 · n)`, 1-based, with rank 0 mapped to the minimum.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Least-squares line through `(i, ys[i])`; returns `(slope, intercept)`.
pub fn linear_fit(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return (0.0, ys.first().copied().unwrap_or(0.0));
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Rise of the fitted line over the whole series, relative to the mean.
pub fn trend_ratio(ys: &[f64]) -> f64 {
    if ys.len() < 2 {
        return 0.0;
    }
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let (slope, _) = linear_fit(ys);
    slope * (ys.len() - 1) as f64 / mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub scenario: Value,
    pub count: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub min_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    /// Sample skewness of the log-latencies; near zero for a log-normal shape.
    pub log_skewness: f64,
    /// Raw samples in collection order.
    pub samples_ms: Vec<f64>,
}

impl LatencyReport {
    pub fn from_samples(samples_ms: Vec<f64>, scenario: Value) -> Self {
        let n = samples_ms.len();
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            scenario,
            count: n,
            mean_ms: mean,
            sd_ms: var.sqrt(),
            min_ms: sorted.first().copied().unwrap_or(f64::NAN),
            p50_ms: percentile(&sorted, 50.0),
            p95_ms: percentile(&sorted, 95.0),
            p99_ms: percentile(&sorted, 99.0),
            max_ms: sorted.last().copied().unwrap_or(f64::NAN),
            log_skewness: log_skewness(&sorted),
            samples_ms,
        }
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}", "n", "mean", "sd", "p50", "p95", "p99", "max");
        let _ = writeln!(
            s,
            "{:>8} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            self.count, self.mean_ms, self.sd_ms, self.p50_ms, self.p95_ms, self.p99_ms, self.max_ms
        );
        s
    }

    /// One `index,latency_ms` row per sample.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,latency_ms\n");
        for (i, v) in self.samples_ms.iter().enumerate() {
            let _ = writeln!(s, "{i},{v}");
        }
        s
    }
}

fn log_skewness(samples: &[f64]) -> f64 {
    let logs: Vec<f64> = samples.iter().filter(|x| **x > 0.0).map(|x| x.ln()).collect();
    let n = logs.len() as f64;
    if logs.len() < 3 {
        return f64::NAN;
    }
    let m = logs.iter().sum::<f64>() / n;
    let m2 = logs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = logs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    m3 / m2.powf(1.5)
}
