use super::AnalyticsError;
use crate::protocol::Histogram;

fn bin_of(value: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    // number of edges <= value, minus one, clamped into the end bins
    edges.partition_point(|&e| e <= value).saturating_sub(1).min(bins - 1)
}

/// Maps each value to its half-open bin `[e_i, e_{i+1})`, reduces the
/// per-bin counts and normalizes them to a mass vector. Values outside the
/// edges fall into the first or last bin. Non-finite values are skipped.
///
/// `edges` must be strictly increasing with at least two entries.
pub fn histogram_map_reduce(values: &[f64], edges: &[f64]) -> Histogram {
    assert!(edges.len() >= 2, "a histogram needs at least two edges");
    let bins = edges.len() - 1;
    let counts = values
        .iter()
        .filter(|v| v.is_finite())
        .map(|&v| (bin_of(v, edges), 1u64))
        .fold(vec![0u64; bins], |mut acc, (bin, one)| {
            acc[bin] += one;
            acc
        });
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Histogram {
            edges: edges.to_vec(),
            mass: vec![0.0; bins],
            empty: true,
        };
    }
    let total = total as f64;
    Histogram {
        edges: edges.to_vec(),
        mass: counts.into_iter().map(|c| c as f64 / total).collect(),
        empty: false,
    }
}

/// Unweighted mean of the mass vectors of the nonempty inputs.
pub fn average_histograms(histograms: &[Histogram]) -> Result<Histogram, AnalyticsError> {
    let first = histograms.first().ok_or(AnalyticsError::EmptyInput)?;
    if histograms.iter().any(|h| h.edges != first.edges) {
        return Err(AnalyticsError::EdgeMismatch);
    }
    let live: Vec<&Histogram> = histograms.iter().filter(|h| !h.empty).collect();
    if live.is_empty() {
        return Err(AnalyticsError::AllEmpty);
    }
    let k = live.len() as f64;
    let mut mass = vec![0.0; first.mass.len()];
    for h in &live {
        if h.mass.len() != mass.len() {
            return Err(AnalyticsError::EdgeMismatch);
        }
        for (m, x) in mass.iter_mut().zip(&h.mass) {
            *m += x;
        }
    }
    mass.iter_mut().for_each(|m| *m /= k);
    Ok(Histogram {
        edges: first.edges.clone(),
        mass,
        empty: false,
    })
}
