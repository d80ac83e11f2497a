//! Normal quantile-quantile data for standardized estimates.

use super::SimError;
use crate::estimator::normal_quantile;

pub const MIN_QQ_POINTS: usize = 20;

/// `(Φ⁻¹((i − 0.5)/N), z_(i))` for the sorted scores.
pub fn qq_data(z: &[f64]) -> Result<Vec<(f64, f64)>, SimError> {
    if z.len() < MIN_QQ_POINTS {
        return Err(SimError::TooFewReplicates {
            got: z.len(),
            needed: MIN_QQ_POINTS,
        });
    }
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (normal_quantile((i as f64 + 0.5) / n), v))
        .collect())
}

/// Least-squares line `empirical = intercept + slope · theoretical`.
pub fn qq_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}
