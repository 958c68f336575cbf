use super::AnalyticsError;
use crate::protocol::{AnomalyRecord, ClientId};

/// One reading of the monitored signal together with the readings of the
/// model's feature signals at the same instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub timestamp: f64,
    pub value: f64,
    pub features: Vec<f64>,
}

/// Scores each observation against the linear model
/// `coefficients = [offset, w_1, .., w_m, scale]` and emits the ones whose
/// standardized absolute residual exceeds `threshold`.
///
/// With a single signal the model is `[offset, scale]`, so the score is
/// `|value - offset| / scale`.
pub fn detect_anomalies(
    client_id: &ClientId,
    signal: &str,
    observations: &[Observation],
    coefficients: &[f64],
    threshold: f64,
) -> Result<Vec<AnomalyRecord>, AnalyticsError> {
    let Some((&scale, head)) = coefficients.split_last() else {
        return Err(AnalyticsError::ZeroScale(0.0));
    };
    if !(scale > 0.0) {
        return Err(AnalyticsError::ZeroScale(scale));
    }
    let Some((&offset, weights)) = head.split_first() else {
        return Err(AnalyticsError::FeatureMismatch {
            coefficients: coefficients.len(),
            features: 0,
        });
    };
    let mut out = Vec::new();
    for obs in observations {
        if obs.features.len() != weights.len() {
            return Err(AnalyticsError::FeatureMismatch {
                coefficients: coefficients.len(),
                features: obs.features.len(),
            });
        }
        let prediction = offset + weights.iter().zip(&obs.features).map(|(w, x)| w * x).sum::<f64>();
        let score = (obs.value - prediction).abs() / scale;
        if score > threshold {
            out.push(AnomalyRecord {
                client_id: client_id.clone(),
                signal: signal.to_owned(),
                value: obs.value,
                score,
                timestamp: obs.timestamp,
            });
        }
    }
    Ok(out)
}
