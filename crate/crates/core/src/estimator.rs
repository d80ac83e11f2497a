//! Doubly robust point estimate, influence values, network HAC variance and
//! Wald intervals.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::graph::DistanceSource;
use crate::nuisance::{NuisanceBundle, NuisanceError, P1Source};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("no unit matches the target exposure history")]
    NoExposedUnits,
    #[error("no unit matches the reference exposure history")]
    NoReferenceUnits,
    #[error("estimated reference weight p2 = {0} is not positive")]
    DegenerateP2(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("a unit cannot match both the target and the reference history ({0})")]
    OverlappingIndicators(usize),
    #[error("Fisher information of the exposure-probability model is singular")]
    SingularInformation,
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("bandwidth must be finite and nonnegative, got {0}")]
    InvalidBandwidth(f64),
    #[error("effect and probability heterogeneity require a network-model p1")]
    NetworkModelRequired,
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
}

/// Units entering the estimate, with their outcome differences and match
/// indicators. `unit_ids` are only carried through to outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationSample {
    pub unit_ids: Vec<usize>,
    pub delta_y: Vec<f64>,
    pub exposed: Vec<bool>,
    pub reference: Vec<bool>,
}

impl EstimationSample {
    pub fn new(delta_y: Vec<f64>, exposed: Vec<bool>, reference: Vec<bool>) -> Self {
        let unit_ids = (0..delta_y.len()).collect();
        Self {
            unit_ids,
            delta_y,
            exposed,
            reference,
        }
    }

    pub fn len(&self) -> usize {
        self.delta_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_y.is_empty()
    }

    fn validate(&self, bundle_len: usize) -> Result<(), EstimatorError> {
        let n = self.len();
        if self.exposed.len() != n
            || self.reference.len() != n
            || self.unit_ids.len() != n
            || bundle_len != n
        {
            return Err(EstimatorError::DimensionMismatch(format!(
                "sample of {n} units but {} nuisance evaluations",
                bundle_len
            )));
        }
        if let Some(i) = (0..n).find(|&i| self.exposed[i] && self.reference[i]) {
            return Err(EstimatorError::OverlappingIndicators(self.unit_ids[i]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitContribution {
    pub unit: usize,
    pub exposed: bool,
    pub reference: bool,
    pub delta_y: f64,
    pub h1: f64,
    pub h0: f64,
    pub tau_i: f64,
    pub phi: f64,
}

#[derive(Debug, Clone)]
pub struct PointEstimate {
    pub tau: f64,
    pub p2: f64,
    pub contributions: Vec<UnitContribution>,
}

/// Plug-in estimator `n⁻¹ Σ (ĥ1 − ĥ0)(ΔY − μ̂)`. Influence values are left
/// at zero; see [`influence_values`].
pub fn dr_aee(
    sample: &EstimationSample,
    nuisances: &NuisanceBundle,
) -> Result<PointEstimate, EstimatorError> {
    sample.validate(nuisances.len())?;
    let n = sample.len();
    if !sample.exposed.iter().any(|&b| b) {
        return Err(EstimatorError::NoExposedUnits);
    }
    if !sample.reference.iter().any(|&b| b) {
        return Err(EstimatorError::NoReferenceUnits);
    }
    let odds: Vec<f64> = (0..n)
        .map(|i| {
            if sample.reference[i] {
                nuisances.pi_target[i] / nuisances.pi_reference[i]
            } else {
                0.0
            }
        })
        .collect();
    let p2 = odds.iter().sum::<f64>() / n as f64;
    if !(p2 > 0.0) || !p2.is_finite() {
        return Err(EstimatorError::DegenerateP2(p2));
    }
    let contributions: Vec<UnitContribution> = (0..n)
        .map(|i| {
            let h1 = if sample.exposed[i] {
                1.0 / nuisances.p1[i]
            } else {
                0.0
            };
            let h0 = odds[i] / p2;
            let tau_i = (h1 - h0) * (sample.delta_y[i] - nuisances.mu[i]);
            UnitContribution {
                unit: sample.unit_ids[i],
                exposed: sample.exposed[i],
                reference: sample.reference[i],
                delta_y: sample.delta_y[i],
                h1,
                h0,
                tau_i,
                phi: 0.0,
            }
        })
        .collect();
    let tau = contributions.iter().map(|c| c.tau_i).sum::<f64>() / n as f64;
    Ok(PointEstimate {
        tau,
        p2,
        contributions,
    })
}

/// `φ̂_i = τ̂_i − ĥ_i1 τ̂`, also written into each contribution.
pub fn influence_values(contributions: &mut [UnitContribution], tau: f64) -> Vec<f64> {
    contributions
        .iter_mut()
        .map(|c| {
            c.phi = c.tau_i - c.h1 * tau;
            c.phi
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Uniform,
}

impl Kernel {
    pub fn id(self) -> &'static str {
        match self {
            Kernel::Uniform => "uniform",
        }
    }
}

/// `ω(s / b)`. With `b = 0` only `s = 0` carries weight.
pub fn kernel_weight(kernel: Kernel, s: f64, b: f64) -> f64 {
    match kernel {
        Kernel::Uniform => {
            if b > 0.0 {
                (s / b <= 1.0) as u8 as f64
            } else {
                (s == 0.0) as u8 as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HacVariance {
    pub value: f64,
    /// The kernel double sum before the floor.
    pub raw: f64,
    /// Whether the floor at the diagonal term was applied.
    pub floored: bool,
}

/// `n⁻¹ Σ_i Σ_{j: d(i,j) ≤ b} v_i v_j ω(d(i,j)/b)` without any floor.
///
/// Rows are computed in parallel and reduced in unit order, so the result
/// does not depend on the thread count.
pub fn kernel_quadratic_form(
    v: &[f64],
    distances: &dyn DistanceSource,
    kernel: Kernel,
    bandwidth: f64,
) -> Result<f64, EstimatorError> {
    if !(bandwidth >= 0.0) || !bandwidth.is_finite() {
        return Err(EstimatorError::InvalidBandwidth(bandwidth));
    }
    let n = v.len();
    if distances.node_count() != n {
        return Err(EstimatorError::DimensionMismatch(format!(
            "{n} values but {} distance nodes",
            distances.node_count()
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let inner: f64 = distances
                .within(i, bandwidth)
                .into_iter()
                .map(|(j, d)| v[j] * kernel_weight(kernel, d, bandwidth))
                .sum();
            v[i] * inner
        })
        .collect();
    Ok(rows.iter().sum::<f64>() / n as f64)
}

/// Network HAC variance of the influence values. A negative total is
/// replaced by the diagonal term `n⁻¹ Σ φ̂_i²`.
pub fn hac_variance(
    phi: &[f64],
    distances: &dyn DistanceSource,
    kernel: Kernel,
    bandwidth: f64,
) -> Result<HacVariance, EstimatorError> {
    let raw = kernel_quadratic_form(phi, distances, kernel, bandwidth)?;
    if raw < 0.0 {
        let diag = phi.iter().map(|v| v * v).sum::<f64>() / phi.len() as f64;
        log::warn!("HAC variance {raw} is negative; using the diagonal term {diag}");
        return Ok(HacVariance {
            value: diag,
            raw,
            floored: true,
        });
    }
    Ok(HacVariance {
        value: raw,
        raw,
        floored: false,
    })
}

/// Removes the projection of `φ̂` on the exposure-model scores:
/// `σ̂² − cᵀ Î⁻¹ c` with `c = n⁻¹ Σ φ̂_i S_i`.
pub fn adjusted_variance(
    sigma2: f64,
    phi: &[f64],
    scores: &DMatrix<f64>,
    information: &DMatrix<f64>,
) -> Result<f64, EstimatorError> {
    let (n, d) = scores.shape();
    if phi.len() != n || information.shape() != (d, d) {
        return Err(EstimatorError::DimensionMismatch(
            "score or information dimensions do not match the influence values".into(),
        ));
    }
    let phi_v = DVector::from_column_slice(phi);
    let c = scores.transpose() * phi_v / n as f64;
    let chol = information
        .clone()
        .cholesky()
        .ok_or(EstimatorError::SingularInformation)?;
    let reduction = c.dot(&chol.solve(&c));
    let adjusted = sigma2 - reduction;
    if adjusted < 0.0 {
        log::warn!("adjusted variance {adjusted} is negative; clamped to 0");
        return Ok(0.0);
    }
    Ok(adjusted)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `τ̂ ± z_{(1+level)/2} √(σ̂²/n)`.
pub fn wald_ci(tau: f64, sigma2: f64, n: usize, level: f64) -> Result<(f64, f64), EstimatorError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimatorError::InvalidLevel(level));
    }
    let half = normal_quantile(0.5 * (1.0 + level)) * (sigma2.max(0.0) / n as f64).sqrt();
    Ok((tau - half, tau + half))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub epsilon: f64,
    pub units: usize,
    /// Units with `π̂(X; ḡ) < ε`.
    pub below_target: usize,
    /// Units with `π̂(X; ḡ') < ε`.
    pub below_reference: usize,
    /// Units flagged by either propensity.
    pub flagged_units: usize,
    pub flagged_fraction: f64,
    /// Evaluations outside `[ε, 1 − ε]` in either propensity.
    pub clipped_evaluations: usize,
}

pub fn positivity_report(
    pi_target: &[f64],
    pi_reference: &[f64],
    epsilon: f64,
) -> PositivityReport {
    let units = pi_target.len();
    let below_target = pi_target.iter().filter(|&&p| p < epsilon).count();
    let below_reference = pi_reference.iter().filter(|&&p| p < epsilon).count();
    let flagged_units = pi_target
        .iter()
        .zip(pi_reference)
        .filter(|(&a, &b)| a < epsilon || b < epsilon)
        .count();
    let clipped_evaluations = pi_target
        .iter()
        .chain(pi_reference)
        .filter(|&&p| p < epsilon || p > 1.0 - epsilon)
        .count();
    PositivityReport {
        epsilon,
        units,
        below_target,
        below_reference,
        flagged_units,
        flagged_fraction: if units == 0 {
            0.0
        } else {
            flagged_units as f64 / units as f64
        },
        clipped_evaluations,
    }
}

/// Which heterogeneity the analyst declares.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heterogeneity {
    pub effect: bool,
    pub probability: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub bandwidth: f64,
    pub kernel: Kernel,
    pub ci_level: f64,
    pub heterogeneity: Heterogeneity,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            bandwidth: 0.0,
            kernel: Kernel::Uniform,
            ci_level: 0.95,
            heterogeneity: Heterogeneity::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AeeResult {
    pub tau: f64,
    pub n: usize,
    /// Variance used for inference, after any adjustment.
    pub variance: f64,
    pub hac: HacVariance,
    pub adjusted: bool,
    pub se: f64,
    pub ci: Interval,
    pub bandwidth: f64,
    pub kernel: Kernel,
    pub p2: f64,
    pub p1_source: &'static str,
    pub clipped: usize,
    #[serde(skip)]
    pub contributions: Vec<UnitContribution>,
}

impl AeeResult {
    pub fn phi(&self) -> Vec<f64> {
        self.contributions.iter().map(|c| c.phi).collect()
    }
}

/// Point estimate, influence values, HAC variance (adjusted when p1 comes
/// from a network model) and the Wald interval.
pub fn estimate(
    sample: &EstimationSample,
    nuisances: &NuisanceBundle,
    distances: &dyn DistanceSource,
    config: &EstimatorConfig,
) -> Result<AeeResult, EstimatorError> {
    if !(config.ci_level > 0.0 && config.ci_level < 1.0) {
        return Err(EstimatorError::InvalidLevel(config.ci_level));
    }
    let het = config.heterogeneity;
    if het.effect && het.probability && !matches!(nuisances.p1_source, P1Source::NetworkModel(_)) {
        return Err(EstimatorError::NetworkModelRequired);
    }
    let PointEstimate {
        tau,
        p2,
        mut contributions,
    } = dr_aee(sample, nuisances)?;
    let phi = influence_values(&mut contributions, tau);
    let hac = hac_variance(&phi, distances, config.kernel, config.bandwidth)?;
    let (variance, adjusted) = match &nuisances.p1_source {
        P1Source::NetworkModel(fit) => (
            adjusted_variance(hac.value, &phi, &fit.scores, &fit.information)?,
            true,
        ),
        _ => (hac.value, false),
    };
    let n = sample.len();
    let (lo, hi) = wald_ci(tau, variance, n, config.ci_level)?;
    Ok(AeeResult {
        tau,
        n,
        variance,
        hac,
        adjusted,
        se: (variance / n as f64).sqrt(),
        ci: Interval {
            level: config.ci_level,
            lo,
            hi,
        },
        bandwidth: config.bandwidth,
        kernel: config.kernel,
        p2,
        p1_source: nuisances.p1_source.label(),
        clipped: nuisances.positivity.clipped_evaluations,
        contributions,
    })
}
