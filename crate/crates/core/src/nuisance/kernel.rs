//! Nadaraya–Watson regression with a product Gaussian kernel.

use super::{FitWarning, NuisanceError};

/// Silverman's rule of thumb per covariate dimension:
/// `h_d = σ_d (4 / ((d + 2) n))^{1/(d+4)}`. Constant columns get `1.0`.
pub fn silverman_bandwidth(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let dim = x.first().map_or(0, Vec::len);
    if n < 2 {
        return vec![1.0; dim];
    }
    let factor = (4.0 / ((dim as f64 + 2.0) * n as f64)).powf(1.0 / (dim as f64 + 4.0));
    (0..dim)
        .map(|k| {
            let mean = x.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            let var = x.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if sd > 0.0 {
                sd * factor
            } else {
                1.0
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct KernelRegressor {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    bandwidth: Vec<f64>,
    global_mean: f64,
}

impl KernelRegressor {
    /// `bandwidth` of `None` uses [`silverman_bandwidth`].
    pub fn fit(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        bandwidth: Option<Vec<f64>>,
    ) -> Result<Self, NuisanceError> {
        if x.is_empty() {
            return Err(NuisanceError::EmptyTrainingSet);
        }
        if x.len() != y.len() {
            return Err(NuisanceError::DimensionMismatch(format!(
                "{} training rows but {} responses",
                x.len(),
                y.len()
            )));
        }
        let bandwidth = bandwidth.unwrap_or_else(|| silverman_bandwidth(&x));
        if bandwidth.len() != x[0].len() {
            return Err(NuisanceError::DimensionMismatch(
                "bandwidth length differs from covariate dimension".into(),
            ));
        }
        if let Some(&h) = bandwidth.iter().find(|&&h| !(h > 0.0)) {
            return Err(NuisanceError::InvalidBandwidth(h));
        }
        let global_mean = y.iter().sum::<f64>() / y.len() as f64;
        Ok(Self {
            x,
            y,
            bandwidth,
            global_mean,
        })
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn predict(&self, query: &[f64]) -> f64 {
        self.predict_with_warning(query).0
    }

    /// Weighted mean of training responses. Log-weights are shifted by their
    /// maximum so the nearest point always carries weight one; only
    /// non-finite inputs can degenerate, and those return the global mean.
    pub fn predict_with_warning(&self, query: &[f64]) -> (f64, Option<FitWarning>) {
        let log_w: Vec<f64> = self
            .x
            .iter()
            .map(|row| {
                -0.5 * row
                    .iter()
                    .zip(query)
                    .zip(&self.bandwidth)
                    .map(|((a, b), h)| ((a - b) / h).powi(2))
                    .sum::<f64>()
            })
            .collect();
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            log::warn!("kernel weights degenerate; using global mean");
            return (self.global_mean, Some(FitWarning::DegenerateKernelWeights));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (lw, y) in log_w.iter().zip(&self.y) {
            let w = (lw - top).exp();
            num += w * y;
            den += w;
        }
        if !(den > 0.0) {
            log::warn!("kernel weights degenerate; using global mean");
            return (self.global_mean, Some(FitWarning::DegenerateKernelWeights));
        }
        (num / den, None)
    }
}

/// One-shot Nadaraya–Watson prediction with a common bandwidth `h`.
pub fn kernel_regress(
    x_train: &[Vec<f64>],
    y_train: &[f64],
    query: &[f64],
    h: f64,
) -> Result<f64, NuisanceError> {
    let dim = x_train.first().map_or(0, Vec::len);
    let model = KernelRegressor::fit(x_train.to_vec(), y_train.to_vec(), Some(vec![h; dim]))?;
    Ok(model.predict(query))
}
