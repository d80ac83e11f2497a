//! Ring design with heterogeneous effects and exposure probabilities.
//!
//! Unit-level shifts `α_i` (exposure probability) and `θ_i` (effect) are
//! drawn once per study and held fixed across replicates.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::ring::{window, RingDistance, WINDOW};
use super::{Design, OracleTruth, SimDataset, SimError};
use crate::graph::DistanceSource;
use crate::seed;

/// Coefficients of `X_{i−3}, …, X_{i+3}` in the exposure probability.
pub const EXPOSURE_COEFFICIENTS: [f64; WINDOW] = [0.1, 0.25, 0.5, 1.0, 0.5, 0.25, 0.1];
pub const BASE_EFFECT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HetScenario {
    /// `α = 0`, `θ ~ N(2, 2²)`.
    EffectOnly,
    /// `α ~ U(−0.05, 0.15)`, `θ ~ N(2, 2²)`, independent.
    Independent,
    /// `D ~ Bern(1/3)`, `α = D·U(−0.05, 0.15)`, `θ = D·N(2, 2²)`.
    Correlated,
}

/// The fixed unit-level heterogeneity of one study.
#[derive(Debug, Clone, PartialEq)]
pub struct Heterogeneity {
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
    pub d: Vec<bool>,
}

impl Heterogeneity {
    pub fn draw(scenario: HetScenario, n: usize, study_seed: u64) -> Self {
        let mut rng = seed::rng_for(study_seed, 0x4845_5445);
        let alpha_law = Uniform::new(-0.05, 0.15).expect("valid bounds");
        let theta_law = Normal::new(2.0, 2.0).expect("valid scale");
        let mut alpha = Vec::with_capacity(n);
        let mut theta = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for _ in 0..n {
            match scenario {
                HetScenario::EffectOnly => {
                    alpha.push(0.0);
                    theta.push(theta_law.sample(&mut rng));
                    d.push(false);
                }
                HetScenario::Independent => {
                    alpha.push(alpha_law.sample(&mut rng));
                    theta.push(theta_law.sample(&mut rng));
                    d.push(false);
                }
                HetScenario::Correlated => {
                    let di = rng.random::<f64>() < 1.0 / 3.0;
                    let a = alpha_law.sample(&mut rng);
                    let t = theta_law.sample(&mut rng);
                    alpha.push(if di { a } else { 0.0 });
                    theta.push(if di { t } else { 0.0 });
                    d.push(di);
                }
            }
        }
        Self { alpha, theta, d }
    }
}

#[derive(Debug, Clone)]
pub struct HeterogeneousDesign {
    pub scenario: HetScenario,
    pub het: Heterogeneity,
    distances: RingDistance,
    features: DMatrix<f64>,
}

impl HeterogeneousDesign {
    pub fn new(scenario: HetScenario, n: usize, study_seed: u64) -> Result<Self, SimError> {
        if n < WINDOW + 1 {
            return Err(SimError::InvalidConfig(format!(
                "ring needs at least {} units, got {n}",
                WINDOW + 1
            )));
        }
        let het = Heterogeneity::draw(scenario, n, study_seed);
        let features = DMatrix::from_fn(
            n,
            2,
            |i, k| if k == 0 { 1.0 } else { het.d[i] as u8 as f64 },
        );
        Ok(Self {
            scenario,
            het,
            distances: RingDistance(n),
            features,
        })
    }

    /// `n⁻¹ Σ (5 + θ_i)`.
    pub fn true_aee(&self) -> f64 {
        let n = self.het.theta.len();
        self.het.theta.iter().map(|t| BASE_EFFECT + t).sum::<f64>() / n as f64
    }
}

impl Design for HeterogeneousDesign {
    fn unit_count(&self) -> usize {
        self.het.alpha.len()
    }

    fn distances(&self) -> &dyn DistanceSource {
        &self.distances
    }

    fn generate(&self, replicate_seed: u64) -> Result<SimDataset, SimError> {
        let n = self.unit_count();
        let mut rng = seed::rng_for(replicate_seed, 0);
        let x_law = Uniform::new(-0.1, 0.1).expect("valid bounds");
        let x: Vec<f64> = (0..n).map(|_| x_law.sample(&mut rng)).collect();
        let mut err_rng = seed::rng_for(replicate_seed, 1);
        let eps = super::errors::independent(n, &mut err_rng);
        let aee = self.true_aee();

        let mut truth = OracleTruth::with_capacity(n);
        let mut covariates = Vec::with_capacity(n);
        let mut exposed = Vec::with_capacity(n);
        let mut delta_y = Vec::with_capacity(n);
        for i in 0..n {
            let xs: Vec<f64> = window(i, n).iter().map(|&j| x[j]).collect();
            let f_g: f64 = xs
                .iter()
                .zip(EXPOSURE_COEFFICIENTS)
                .map(|(v, c)| v * c)
                .sum();
            let f_y: f64 = xs.iter().sum();
            let pi = 0.5 + self.het.alpha[i] + f_g;
            let g = rng.random::<f64>() < pi;
            let effect = BASE_EFFECT + self.het.theta[i];
            truth.pi_target.push(pi);
            truth.pi_reference.push(1.0 - pi);
            truth.mu.push(f_y);
            truth.p1.push(0.5 + self.het.alpha[i]);
            truth.aee_i.push(effect);
            exposed.push(g);
            delta_y.push(effect * g as u8 as f64 + f_y + eps[i]);
            covariates.push(xs);
        }
        truth.aee = aee;
        let reference = exposed.iter().map(|&g| !g).collect();
        Ok(SimDataset {
            delta_y,
            exposed,
            reference,
            covariates,
            truth,
            features: Some(self.features.clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_one_is_homogeneous_in_probability() {
        let d = HeterogeneousDesign::new(HetScenario::EffectOnly, 500, 1).unwrap();
        assert!(d.het.alpha.iter().all(|&a| a == 0.0));
        let data = d.generate(4).unwrap();
        assert!(data.truth.p1.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn heterogeneity_fixed_across_replicates() {
        let d = HeterogeneousDesign::new(HetScenario::Correlated, 300, 8).unwrap();
        let a = d.generate(1).unwrap();
        let b = d.generate(2).unwrap();
        assert_eq!(a.truth.aee_i, b.truth.aee_i);
        assert_eq!(a.truth.p1, b.truth.p1);
        assert_ne!(a.delta_y, b.delta_y);
        let again = HeterogeneousDesign::new(HetScenario::Correlated, 300, 8).unwrap();
        assert_eq!(again.het, d.het);
    }

    #[test]
    fn correlated_scenario_ties_alpha_and_theta_to_d() {
        let d = HeterogeneousDesign::new(HetScenario::Correlated, 3000, 5).unwrap();
        for i in 0..3000 {
            if !d.het.d[i] {
                assert_eq!(d.het.alpha[i], 0.0);
                assert_eq!(d.het.theta[i], 0.0);
            }
        }
        let share = d.het.d.iter().filter(|&&b| b).count() as f64 / 3000.0;
        assert!((share - 1.0 / 3.0).abs() < 0.03);
    }

    #[test]
    fn probabilities_in_unit_interval() {
        let d = HeterogeneousDesign::new(HetScenario::Independent, 1000, 2).unwrap();
        let data = d.generate(3).unwrap();
        assert!(data.truth.pi_target.iter().all(|&p| p > 0.2 && p < 0.8));
    }
}
