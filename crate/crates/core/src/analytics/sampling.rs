use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Keeps each value independently with probability `percent / 100`,
/// preserving order.
pub fn sample_values(values: &[f64], percent: f64, seed: u64) -> Vec<f64> {
    let p = (percent / 100.0).clamp(0.0, 1.0);
    if p >= 1.0 {
        return values.to_vec();
    }
    if p <= 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    values.iter().copied().filter(|_| rng.random::<f64>() < p).collect()
}
