//! Independent oracles for the analytics kernels. Each check returns a
//! one-line summary on success and the first counterexample on failure.

use oodida::analytics::{average_histograms, detect_anomalies, federated_average, gradient, histogram_map_reduce, local_train, Observation};
use oodida::protocol::{ClientId, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

pub type Check = Result<String, String>;

fn edges(rng: &mut impl Rng) -> Vec<f64> {
    let mut e = vec![rng.random_range(-100.0..100.0)];
    for _ in 0..rng.random_range(1..12) {
        let last = *e.last().unwrap();
        e.push(last + rng.random_range(1e-3..50.0));
    }
    e
}

fn brute_bin(v: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    let mut bin = 0;
    for (i, e) in edges.iter().enumerate().take(bins) {
        if v >= *e {
            bin = i;
        }
    }
    bin
}

fn brute_histogram(values: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut counts = vec![0.0; edges.len() - 1];
    for v in values {
        counts[brute_bin(*v, edges)] += 1.0;
    }
    let n = values.len() as f64;
    counts.iter().map(|c| c / n).collect()
}

pub fn histogram_mass_normalized(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let e = edges(&mut rng);
        let mut values: Vec<f64> = (0..rng.random_range(1..400)).map(|_| rng.random_range(-300.0..300.0)).collect();
        if rng.random_bool(0.2) {
            values.push(f64::NAN);
            values.push(f64::INFINITY);
        }
        let h = histogram_map_reduce(&values, &e);
        let err = (h.mass.iter().sum::<f64>() - 1.0).abs();
        if h.empty || err > 1e-9 {
            return Err(format!("case {case}: mass sums to 1 ± {err:e}, empty = {}", h.empty));
        }
        worst = worst.max(err);
    }
    Ok(format!("{cases} cases, max |Σmass − 1| = {worst:.1e}"))
}

pub fn fleet_average_equals_pooled(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let e = edges(&mut rng);
        let (clients, per) = (rng.random_range(1..10), rng.random_range(1..200));
        let data: Vec<Vec<f64>> = (0..clients)
            .map(|_| (0..per).map(|_| rng.random_range(-300.0..300.0)).collect())
            .collect();
        let locals: Vec<_> = data.iter().map(|d| histogram_map_reduce(d, &e)).collect();
        let avg = average_histograms(&locals).map_err(|err| format!("case {case}: {err}"))?;
        let pooled = brute_histogram(&data.concat(), &e);
        for (a, b) in avg.mass.iter().zip(&pooled) {
            let d = (a - b).abs();
            if d > 1e-9 {
                return Err(format!("case {case}: averaged {a} vs pooled {b}"));
            }
            worst = worst.max(d);
        }
    }
    Ok(format!("{cases} cases, max deviation {worst:.1e}"))
}

fn loss(w: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let mut p = w[0];
        for j in 0..x.len() {
            p += w[j + 1] * x[j];
        }
        s += (p - y) * (p - y);
    }
    s / (2.0 * ys.len() as f64)
}

pub fn gradient_matches_finite_differences(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (dim, n) = (rng.random_range(1..6), rng.random_range(1..60));
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let w: Vec<f64> = (0..=dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = gradient(&w, &xs, &ys);
        let h = 1e-5;
        let fd: Vec<f64> = (0..w.len())
            .map(|j| {
                let (mut up, mut down) = (w.clone(), w.clone());
                up[j] += h;
                down[j] -= h;
                (loss(&up, &xs, &ys) - loss(&down, &xs, &ys)) / (2.0 * h)
            })
            .collect();
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-8);
        let rel = diff / scale;
        if rel >= 1e-6 {
            return Err(format!("case {case}: relative error {rel:e}"));
        }
        // One training epoch is exactly one step along that gradient.
        let lr = 0.05;
        let stepped = local_train(&ModelParams { weights: w.clone(), sample_count: 0 }, &xs, &ys, lr, 1)
            .map_err(|e| format!("case {case}: {e}"))?;
        for ((s, wj), gj) in stepped.weights.iter().zip(&w).zip(&fd) {
            if (s - (wj - lr * gj)).abs() > 1e-8 {
                return Err(format!("case {case}: training step disagrees with the gradient"));
            }
        }
        worst = worst.max(rel);
    }
    Ok(format!("{cases} instances, max relative error {worst:.1e}"))
}

pub fn anomaly_rate_on_standard_normal(n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let obs: Vec<Observation> = (0..n)
        .map(|i| Observation {
            timestamp: i as f64,
            value: StandardNormal.sample(&mut rng),
            features: vec![],
        })
        .collect();
    let hits = detect_anomalies(&ClientId::new("c"), "z", &obs, &[0.0, 1.0], 3.0)
        .map_err(|e| e.to_string())?
        .len() as f64;
    let p = 2.0 * Normal::standard().cdf(-3.0);
    let mean = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let z = (hits - mean) / sigma;
    if z.abs() <= 5.0 {
        Ok(format!("{hits} of {n} flagged, expected {mean:.1} (z = {z:.2})"))
    } else {
        Err(format!("{hits} of {n} flagged, expected {mean:.1} ± {sigma:.1} (z = {z:.2})"))
    }
}

pub fn federated_average_matches_weighted_sum(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let dim = rng.random_range(1..8);
        let models: Vec<ModelParams> = (0..rng.random_range(1..12))
            .map(|_| ModelParams {
                weights: (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect(),
                sample_count: if rng.random_bool(0.1) { 0 } else { rng.random_range(1..10_000) },
            })
            .collect();
        let total: u64 = models.iter().map(|m| m.sample_count).sum();
        if total == 0 {
            continue;
        }
        let avg = federated_average(&models).map_err(|e| format!("case {case}: {e}"))?;
        for j in 0..dim {
            let direct = models.iter().map(|m| m.sample_count as f64 * m.weights[j]).sum::<f64>() / total as f64;
            let d = (avg.weights[j] - direct).abs();
            if d > 1e-12 {
                return Err(format!("case {case}: weight {j} is {} vs {direct}", avg.weights[j]));
            }
            worst = worst.max(d);
        }
        if avg.sample_count != total {
            return Err(format!("case {case}: sample count {} vs {total}", avg.sample_count));
        }
    }
    Ok(format!("{cases} cases, max deviation {worst:.1e}"))
}
