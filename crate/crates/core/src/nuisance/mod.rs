//! Nuisance functions: exposure propensities, the reference-trend outcome
//! regression and the marginal exposure probability.

mod bridge;
mod glm;
mod kernel;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

pub use bridge::{
    exhaustive_exposure_propensity, exposure_propensities, mc_exposure_propensity, HistoryQuery,
    PeriodPropensities, PropensityMethod, TreatmentPropensity, DEFAULT_DRAWS, MAX_EXHAUSTIVE,
};
pub use glm::{fit_linear_ols, fit_logistic_irls, with_intercept, LogisticFit, OlsFit, RIDGE};
pub use kernel::{kernel_regress, silverman_bandwidth, KernelRegressor};

pub(crate) use glm::expit;

use crate::estimator::{positivity_report, PositivityReport};
use crate::exposure::ExposureError;

/// Default propensity clipping constant.
pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum NuisanceError {
    #[error("IRLS did not converge within {iterations} iterations")]
    Nonconvergence { iterations: usize },
    #[error("design matrix is rank deficient even after ridge")]
    RankDeficient,
    #[error("binary response expected, got {0}")]
    InvalidResponse(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("kernel bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("unit {0} has an empty interference set")]
    EmptyInterferenceSet(usize),
    #[error("unit {unit} has {size} free treatment variables, above the enumeration limit")]
    InterferenceSetTooLarge { unit: usize, size: usize },
    #[error("exposure share is {mean}; the marginal exposure probability is not estimable")]
    DegenerateExposure { mean: f64 },
    #[error("probability out of range: {0}")]
    InvalidProbability(f64),
    #[error("Monte Carlo draw count must be at least 1")]
    InvalidDraws,
    #[error("clipping constant must lie in [0, 0.5), got {0}")]
    InvalidEpsilon(f64),
    #[error(transparent)]
    Exposure(#[from] ExposureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    RidgeApplied,
    Separation,
    DegenerateKernelWeights,
}

/// Caller-supplied truth: `(unit, covariates) -> value`.
pub type OracleFn = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Learner {
    Logistic {
        max_iter: usize,
        tol: f64,
    },
    Linear,
    /// Nadaraya-Watson; `None` selects Silverman bandwidths.
    Kernel {
        bandwidth: Option<Vec<f64>>,
    },
    Oracle(OracleFn),
}

impl fmt::Debug for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Learner::Logistic { max_iter, tol } => f
                .debug_struct("Logistic")
                .field("max_iter", max_iter)
                .field("tol", tol)
                .finish(),
            Learner::Linear => f.write_str("Linear"),
            Learner::Kernel { bandwidth } => f
                .debug_struct("Kernel")
                .field("bandwidth", bandwidth)
                .finish(),
            Learner::Oracle(_) => f.write_str("Oracle(..)"),
        }
    }
}

impl Learner {
    pub fn logistic() -> Self {
        Learner::Logistic {
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }

    pub fn kernel() -> Self {
        Learner::Kernel { bandwidth: None }
    }

    pub fn oracle(f: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Learner::Oracle(Arc::new(f))
    }

    /// An oracle returning `value` everywhere.
    pub fn constant(value: f64) -> Self {
        Learner::oracle(move |_, _| value)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Learner::Logistic { .. } => "logistic",
            Learner::Linear => "linear",
            Learner::Kernel { .. } => "kernel",
            Learner::Oracle(_) => "oracle",
        }
    }

    /// Fits on rows `x` (without intercept) and responses `y`. Parametric
    /// learners add an intercept column. Oracles ignore the data.
    pub fn fit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<FittedLearner, NuisanceError> {
        match self {
            Learner::Logistic { max_iter, tol } => {
                let design = with_intercept(x);
                fit_logistic_irls(&design, y, *max_iter, *tol).map(FittedLearner::Logistic)
            }
            Learner::Linear => {
                let design = with_intercept(x);
                fit_linear_ols(&design, y).map(FittedLearner::Linear)
            }
            Learner::Kernel { bandwidth } => {
                KernelRegressor::fit(x.to_vec(), y.to_vec(), bandwidth.clone())
                    .map(FittedLearner::Kernel)
            }
            Learner::Oracle(f) => Ok(FittedLearner::Oracle(f.clone())),
        }
    }
}

/// An immutable fitted nuisance model.
#[derive(Clone)]
pub enum FittedLearner {
    Logistic(LogisticFit),
    Linear(OlsFit),
    Kernel(KernelRegressor),
    Oracle(OracleFn),
}

impl FittedLearner {
    pub fn predict(&self, unit: usize, x: &[f64]) -> f64 {
        match self {
            FittedLearner::Logistic(fit) => expit(intercept_dot(&fit.coefficients, x)),
            FittedLearner::Linear(fit) => intercept_dot(&fit.coefficients, x),
            FittedLearner::Kernel(model) => model.predict(x),
            FittedLearner::Oracle(f) => f(unit, x),
        }
    }

    pub fn predict_all(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, r)| self.predict(i, r))
            .collect()
    }

    /// JSON audit record of the fitted state.
    pub fn audit(&self) -> serde_json::Value {
        match self {
            FittedLearner::Logistic(fit) => serde_json::json!({"kind": "logistic", "fit": fit}),
            FittedLearner::Linear(fit) => serde_json::json!({"kind": "linear", "fit": fit}),
            FittedLearner::Kernel(model) => {
                serde_json::json!({"kind": "kernel", "bandwidth": model.bandwidth()})
            }
            FittedLearner::Oracle(_) => serde_json::json!({"kind": "oracle"}),
        }
    }
}

fn intercept_dot(coefficients: &[f64], x: &[f64]) -> f64 {
    coefficients[0]
        + coefficients[1..]
            .iter()
            .zip(x)
            .map(|(b, v)| b * v)
            .sum::<f64>()
}

/// Share of units whose history matches the target.
pub fn empirical_exposure_prob(indicators: &[bool]) -> Result<f64, NuisanceError> {
    if indicators.is_empty() {
        return Err(NuisanceError::EmptyTrainingSet);
    }
    let mean = indicators.iter().filter(|&&b| b).count() as f64 / indicators.len() as f64;
    if mean == 0.0 || mean == 1.0 {
        return Err(NuisanceError::DegenerateExposure { mean });
    }
    Ok(mean)
}

/// Parametric exposure-probability model `p_i = expit(f_iᵀη)`.
#[derive(Debug, Clone, Serialize)]
pub struct NetworkExposureFit {
    pub probabilities: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Per-unit score `f_i (1(G_i = ḡ) − p_i)`, one row per unit.
    #[serde(skip)]
    pub scores: DMatrix<f64>,
    /// Average Fisher information `n⁻¹ Σ p_i (1 − p_i) f_i f_iᵀ`.
    #[serde(skip)]
    pub information: DMatrix<f64>,
    pub warnings: Vec<FitWarning>,
}

/// Logistic fit of the match indicator on network features. `features`
/// must contain any intercept column the caller wants.
pub fn fit_network_exposure_prob(
    features: &DMatrix<f64>,
    indicators: &[bool],
) -> Result<NetworkExposureFit, NuisanceError> {
    let y: Vec<f64> = indicators.iter().map(|&b| b as u8 as f64).collect();
    let fit = fit_logistic_irls(features, &y, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let probabilities = fit.predict(features);
    let (n, d) = features.shape();
    let scores = DMatrix::from_fn(n, d, |i, k| features[(i, k)] * (y[i] - probabilities[i]));
    let mut information = DMatrix::zeros(d, d);
    for (i, row) in features.row_iter().enumerate() {
        let r = row.transpose();
        let w = probabilities[i] * (1.0 - probabilities[i]) / n as f64;
        information.ger(w, &r, &r, 1.0);
    }
    Ok(NetworkExposureFit {
        probabilities,
        coefficients: fit.coefficients,
        scores,
        information,
        warnings: fit.warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum P1Source {
    Empirical,
    NetworkModel(NetworkExposureFit),
    Oracle,
}

impl P1Source {
    pub fn label(&self) -> &'static str {
        match self {
            P1Source::Empirical => "empirical",
            P1Source::NetworkModel(_) => "network-model",
            P1Source::Oracle => "oracle",
        }
    }
}

/// Evaluated nuisances for every unit in the estimation sample.
#[derive(Debug, Clone)]
pub struct NuisanceBundle {
    pub pi_target: Vec<f64>,
    pub pi_reference: Vec<f64>,
    pub mu: Vec<f64>,
    pub p1: Vec<f64>,
    pub p1_source: P1Source,
    pub epsilon: f64,
    /// Computed before clipping.
    pub positivity: PositivityReport,
}

fn clip(values: &[f64], eps: f64) -> Vec<f64> {
    values.iter().map(|&p| p.clamp(eps, 1.0 - eps)).collect()
}

impl NuisanceBundle {
    /// Validates lengths and ranges, records positivity flags and clips
    /// both propensities into `[ε, 1 − ε]`.
    pub fn new(
        pi_target: Vec<f64>,
        pi_reference: Vec<f64>,
        mu: Vec<f64>,
        p1: Vec<f64>,
        p1_source: P1Source,
        epsilon: f64,
    ) -> Result<Self, NuisanceError> {
        let n = pi_target.len();
        if pi_reference.len() != n || mu.len() != n || p1.len() != n {
            return Err(NuisanceError::DimensionMismatch(format!(
                "nuisance lengths {}, {}, {}, {}",
                n,
                pi_reference.len(),
                mu.len(),
                p1.len()
            )));
        }
        if !(0.0..0.5).contains(&epsilon) {
            return Err(NuisanceError::InvalidEpsilon(epsilon));
        }
        for &p in pi_target.iter().chain(&pi_reference) {
            if !(0.0..=1.0).contains(&p) {
                return Err(NuisanceError::InvalidProbability(p));
            }
        }
        if let Some(&p) = p1.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(NuisanceError::InvalidProbability(p));
        }
        let positivity = positivity_report(&pi_target, &pi_reference, epsilon);
        if positivity.clipped_evaluations > 0 {
            log::debug!(
                "{} propensity evaluations clipped into [{epsilon}, {}]",
                positivity.clipped_evaluations,
                1.0 - epsilon
            );
        }
        Ok(Self {
            pi_target: clip(&pi_target, epsilon),
            pi_reference: clip(&pi_reference, epsilon),
            mu,
            p1,
            p1_source,
            epsilon,
            positivity,
        })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_probability() {
        assert_eq!(
            empirical_exposure_prob(&[true, false, true, false]).unwrap(),
            0.5
        );
        assert!(matches!(
            empirical_exposure_prob(&[true, true]),
            Err(NuisanceError::DegenerateExposure { .. })
        ));
    }

    #[test]
    fn intercept_only_network_fit_is_empirical() {
        let g = [true, false, false, true, true, false, false, false];
        let f = DMatrix::from_element(g.len(), 1, 1.0);
        let fit = fit_network_exposure_prob(&f, &g).unwrap();
        for p in &fit.probabilities {
            assert!((p - 3.0 / 8.0).abs() < 1e-10);
        }
        let score_sum: f64 = fit.scores.column(0).sum();
        assert!(score_sum.abs() < 1e-8);
        assert!((fit.information[(0, 0)] - 3.0 / 8.0 * 5.0 / 8.0).abs() < 1e-10);
    }

    #[test]
    fn saturated_fit_gives_cell_means() {
        let d = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let g = [true, false, false, false, true, true, false];
        let f = with_intercept(&d.iter().map(|&v| vec![v]).collect::<Vec<_>>());
        let fit = fit_network_exposure_prob(&f, &g).unwrap();
        for (i, p) in fit.probabilities.iter().enumerate() {
            let expected = if d[i] == 0.0 { 0.25 } else { 2.0 / 3.0 };
            assert!((p - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn bundle_clips_and_reports() {
        let b = NuisanceBundle::new(
            vec![0.001, 0.5, 0.999],
            vec![0.5, 0.5, 0.5],
            vec![0.0; 3],
            vec![0.5; 3],
            P1Source::Empirical,
            0.01,
        )
        .unwrap();
        assert_eq!(b.pi_target, vec![0.01, 0.5, 0.99]);
        assert_eq!(b.positivity.clipped_evaluations, 2);
        assert!(NuisanceBundle::new(
            vec![0.5],
            vec![0.5],
            vec![0.0],
            vec![1.0],
            P1Source::Empirical,
            0.01
        )
        .is_err());
    }

    #[test]
    fn learner_round_trip() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 1.0 + 0.5 * i as f64).collect();
        let fit = Learner::Linear.fit(&x, &y).unwrap();
        assert!((fit.predict(0, &[4.0]) - 3.0).abs() < 1e-12);
        let audit = fit.audit();
        assert_eq!(audit["kind"], "linear");
        let oracle = Learner::constant(0.5).fit(&[], &[]).unwrap();
        assert_eq!(oracle.predict(3, &[]), 0.5);
    }
}
