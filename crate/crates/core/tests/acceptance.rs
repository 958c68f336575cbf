//! Acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::collections::BTreeSet;
use std::future::Future;
use std::time::{Duration, Instant};

use common::oracles::{self, Check};
use oodida::harness::{
    run_iteration_bench, run_surge, run_throughput, DeploymentConfig, LocalDeployment, ScenarioSpec, Transport, ValueWidth,
};
use oodida::protocol::{decode, decode_all, encode, validate_assignment, validate_value, DoneStatus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

async fn surge() -> Check {
    let mut d = LocalDeployment::start(DeploymentConfig::local(Transport::LoopbackTcp))
        .await
        .map_err(|e| e.to_string())?;
    d.add_clients(3, |i, id| oodida::client::ClientConfig {
        seed: i as u64,
        ..oodida::client::ClientConfig::new(id)
    })
    .map_err(|e| e.to_string())?;
    if !d.wait_for_clients(3, common::WAIT).await || !d.ready(common::WAIT).await {
        return Err("fleet did not come up".into());
    }
    let out = run_surge(100, &d).await;
    d.shutdown().await;
    let s = out.map_err(|e| e.to_string())?;
    let r = &s.report;
    let line = format!(
        "n = {}, mean {:.2} ms, p99 {:.2} ms, trend {:.1}% of mean",
        r.count,
        r.mean_ms,
        r.p99_ms,
        100.0 * s.trend_ratio
    );
    if r.count == 100 && r.mean_ms < 100.0 && r.p99_ms < 250.0 && s.trend_ratio < 0.5 {
        Ok(line)
    } else {
        Err(line)
    }
}

async fn concurrency() -> Check {
    const SAMPLES: u64 = 10_000;
    let mut p95 = Vec::new();
    let mut notes = Vec::new();
    let mut ok = true;
    for tasks in [1usize, 5, 10] {
        let iterations = SAMPLES.div_ceil(tasks as u64) as u32;
        let spec = ScenarioSpec::dummy(100, tasks, iterations, Transport::LoopbackTcp);
        let r = run_iteration_bench(&spec).await.map_err(|e| format!("{tasks} tasks: {e}"))?;
        ok &= r.lossless() && r.report.count as u64 == spec.sample_count() && r.report.p95_ms < 100.0;
        notes.push(format!(
            "{tasks} task(s): {}/{} results, p95 {:.2} ms",
            r.results_received, r.results_expected, r.report.p95_ms
        ));
        p95.push(r.report.p95_ms);
    }
    ok &= p95.windows(2).all(|w| w[0] <= w[1]);
    let line = notes.join("; ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

async fn federated() -> Check {
    let out = common::fl::federated_run(Transport::LoopbackTcp).await;
    let close = out.weights.len() == 2 && out.weights.iter().zip(&out.oracle).all(|(w, o)| (w - o).abs() < 0.1);
    let line = format!(
        "{:?} after {} round(s), weights {:?} vs least squares {:?}",
        out.status, out.rounds, out.weights, out.oracle
    );
    if out.status == Some(DoneStatus::Completed) && out.rounds <= 50 && close {
        Ok(line)
    } else {
        Err(line)
    }
}

async fn fault_tolerance() -> Check {
    let out = common::fault::kill_and_rejoin(Transport::LoopbackTcp).await;
    let line = format!(
        "contributors per iteration {:?}, terminal messages {}, {:?}",
        out.contributors, out.terminals, out.status
    );
    if out.contributors == [4, 5, 5] && out.terminals == 1 && out.status == Some(DoneStatus::Completed) {
        Ok(line)
    } else {
        Err(line)
    }
}

fn analytics() -> Check {
    let parts = [
        ("mass", oracles::histogram_mass_normalized(1000)),
        ("pooled", oracles::fleet_average_equals_pooled(1000)),
        ("gradient", oracles::gradient_matches_finite_differences(100)),
        ("anomaly", oracles::anomaly_rate_on_standard_normal(1_000_000)),
        ("fedavg", oracles::federated_average_matches_weighted_sum(1000)),
    ];
    let failed: Vec<String> = parts
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    if failed.is_empty() {
        Ok(parts.iter().map(|(n, r)| format!("{n}: {}", r.as_ref().unwrap())).collect::<Vec<_>>().join("; "))
    } else {
        Err(failed.join("; "))
    }
}

fn protocol() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0dd1da);
    let msgs: Vec<_> = (0..10_000).map(|_| common::gen::message(&mut rng)).collect();
    for (i, m) in msgs.iter().enumerate() {
        let frame = encode(m).map_err(|e| format!("case {i}: {e}"))?;
        if &decode(&frame).map_err(|e| format!("case {i}: {e}"))? != m {
            return Err(format!("case {i}: round trip changed the message"));
        }
    }
    let stream: Vec<u8> = msgs.iter().flat_map(|m| encode(m).unwrap()).collect();
    if decode_all(&stream).map_err(|e| e.to_string())? != msgs {
        return Err("sequential frames decoded out of order".into());
    }
    let corpus: Vec<Value> = serde_json::from_str(include_str!("data/validator_corpus.json")).map_err(|e| e.to_string())?;
    for case in &corpus {
        let name = case["name"].as_str().unwrap_or("?");
        let verdict = match case.get("raw") {
            Some(raw) => validate_assignment(raw.as_str().unwrap_or_default()),
            None => validate_value(&case["document"]),
        };
        let expected: BTreeSet<String> = serde_json::from_value(case["violation_paths"].clone()).unwrap_or_default();
        let got: BTreeSet<String> = match &verdict {
            Ok(_) => BTreeSet::new(),
            Err(e) => e.violations().iter().map(|v| v.path.clone()).collect(),
        };
        if verdict.is_ok() != case["valid"].as_bool().unwrap_or(false) || got != expected {
            return Err(format!("corpus case {name}: got {got:?}, expected {expected:?}"));
        }
    }
    Ok(format!(
        "10000 fuzzed round trips, {} sequential frames, {} corpus cases",
        msgs.len(),
        corpus.len()
    ))
}

async fn throughput() -> Check {
    let d = Duration::from_secs(3);
    let mut lines = Vec::new();
    let mut ok = true;
    for width in [ValueWidth::Single, ValueWidth::Double] {
        let a = run_throughput(d, width, 42).await.map_err(|e| e.to_string())?;
        let b = run_throughput(d, width, 42).await.map_err(|e| e.to_string())?;
        let spread = (a.values_per_s - b.values_per_s).abs() / a.values_per_s.min(b.values_per_s);
        ok &= spread < 0.2 && a.values > 0;
        lines.push(format!(
            "{width:?}: {:.2e} and {:.2e} values/s ({:.1}% apart), {:.2} GB/hour",
            a.values_per_s,
            b.values_per_s,
            100.0 * spread,
            a.bytes_per_hour / 1e9
        ));
    }
    let line = lines.join("; ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn report(name: &str, started: Instant, check: Check) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match check {
        Ok(s) => {
            println!("PASS {name} ({secs:.1} s): {s}");
            true
        }
        Err(s) => {
            println!("FAIL {name} ({secs:.1} s): {s}");
            false
        }
    }
}

async fn timed<F: Future<Output = Check>>(name: &str, f: F) -> bool {
    let t = Instant::now();
    report(name, t, f.await)
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("runtime");
    let results = rt.block_on(async {
        vec![
            timed("surge", surge()).await,
            timed("concurrency_bench", concurrency()).await,
            timed("federated_learning", federated()).await,
            timed("fault_tolerance", fault_tolerance()).await,
            report("analytics_oracles", Instant::now(), analytics()),
            report("protocol", Instant::now(), protocol()),
            timed("throughput_stability", throughput()).await,
        ]
    });
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
