//! Linear regression with a bias term, trained locally by full-batch
//! gradient descent and combined off-board by sample-weighted averaging.
//!
//! The local objective is the halved mean squared error
//! `L(w) = 1/(2n) Σ (w·x̃ - y)²` with `x̃ = [1, x_1, .., x_d]`, whose
//! gradient is `1/n Σ (w·x̃ - y) x̃`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::AnalyticsError;
use crate::protocol::{ModelParams, ValidationRef};

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl ValidationSet {
    /// Materializes a validation reference from an assignment.
    pub fn from_ref(r: &ValidationRef) -> Self {
        match r {
            ValidationRef::Inline { features, targets } => Self {
                features: features.clone(),
                targets: targets.clone(),
            },
            ValidationRef::Linear {
                weights,
                noise_sd,
                samples,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let noise = Normal::new(0.0, *noise_sd).expect("validated noise_sd");
                let d = weights.len().saturating_sub(1);
                let mut features = Vec::with_capacity(*samples as usize);
                let mut targets = Vec::with_capacity(*samples as usize);
                for _ in 0..*samples {
                    let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    targets.push(predict(weights, &x) + noise.sample(&mut rng));
                    features.push(x);
                }
                Self { features, targets }
            }
        }
    }
}

fn predict(weights: &[f64], x: &[f64]) -> f64 {
    weights[0] + weights[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
}

fn check_dims(weights: &[f64], features: &[Vec<f64>], targets: &[f64]) -> Result<(), AnalyticsError> {
    if features.len() != targets.len() {
        return Err(AnalyticsError::DimensionMismatch {
            expected: features.len(),
            got: targets.len(),
        });
    }
    if let Some(row) = features.iter().find(|r| r.len() + 1 != weights.len()) {
        return Err(AnalyticsError::DimensionMismatch {
            expected: weights.len(),
            got: row.len() + 1,
        });
    }
    Ok(())
}

/// Halved mean squared error of the model over a data window.
pub fn half_mse(weights: &[f64], features: &[Vec<f64>], targets: &[f64]) -> f64 {
    let n = targets.len() as f64;
    features
        .iter()
        .zip(targets)
        .map(|(x, y)| (predict(weights, x) - y).powi(2))
        .sum::<f64>()
        / (2.0 * n)
}

/// Gradient of [`half_mse`] with respect to the weights.
pub fn gradient(weights: &[f64], features: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
    let n = targets.len() as f64;
    let mut g = vec![0.0; weights.len()];
    for (x, y) in features.iter().zip(targets) {
        let r = predict(weights, x) - y;
        g[0] += r;
        for (gi, xi) in g[1..].iter_mut().zip(x) {
            *gi += r * xi;
        }
    }
    g.iter_mut().for_each(|gi| *gi /= n);
    g
}

/// Runs `epochs` full-batch gradient steps from `model` over the window.
/// An empty window leaves the weights unchanged and reports zero samples.
pub fn local_train(
    model: &ModelParams,
    features: &[Vec<f64>],
    targets: &[f64],
    learning_rate: f64,
    epochs: u32,
) -> Result<ModelParams, AnalyticsError> {
    check_dims(&model.weights, features, targets)?;
    if targets.is_empty() {
        return Ok(ModelParams {
            weights: model.weights.clone(),
            sample_count: 0,
        });
    }
    let mut w = model.weights.clone();
    for _ in 0..epochs {
        let g = gradient(&w, features, targets);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= learning_rate * gi;
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(AnalyticsError::DivergedToNonFinite);
        }
    }
    Ok(ModelParams {
        weights: w,
        sample_count: targets.len() as u64,
    })
}

/// Sample-count weighted mean of local models; models with a zero count are
/// skipped.
pub fn federated_average(locals: &[ModelParams]) -> Result<ModelParams, AnalyticsError> {
    let first = locals.first().ok_or(AnalyticsError::EmptyInput)?;
    let dim = first.weights.len();
    if let Some(m) = locals.iter().find(|m| m.weights.len() != dim) {
        return Err(AnalyticsError::DimensionMismatch {
            expected: dim,
            got: m.weights.len(),
        });
    }
    let total: u64 = locals.iter().map(|m| m.sample_count).sum();
    if total == 0 {
        return Err(AnalyticsError::AllZeroCounts);
    }
    let mut weights = vec![0.0; dim];
    for m in locals.iter().filter(|m| m.sample_count > 0) {
        let share = m.sample_count as f64 / total as f64;
        for (acc, w) in weights.iter_mut().zip(&m.weights) {
            *acc += share * w;
        }
    }
    Ok(ModelParams {
        weights,
        sample_count: total,
    })
}

/// Root mean squared prediction error over the validation set.
pub fn validation_error(model: &ModelParams, v: &ValidationSet) -> Result<f64, AnalyticsError> {
    check_dims(&model.weights, &v.features, &v.targets)?;
    if v.targets.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    Ok((2.0 * half_mse(&model.weights, &v.features, &v.targets)).sqrt())
}
