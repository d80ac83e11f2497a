//! Bipartite design: intervention units act on outcome units through a
//! fixed interference matrix.

use std::path::Path;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use super::errors::{DenseSampler, ErrorModel};
use super::{Design, ErrorMode, OracleTruth, SimDataset, SimError};
use crate::exposure::ExposureMapping;
use crate::graph::{project_bipartite, DistanceSource, InterferenceMatrix, WeightedGraph};
use crate::io::read_interference;
use crate::nuisance::{exhaustive_exposure_propensity, expit, HistoryQuery};
use crate::seed;

pub const X_SD: f64 = 5.0;
pub const X_BOUND: f64 = 1.5;
pub const ERROR_SCALE: f64 = 0.1;
pub const ERROR_CUTOFF: f64 = 1.1;

pub fn treatment_probability(x: f64) -> f64 {
    expit(0.7 * (0.9 * (0.2 * x - 2.0).powi(2)).sin() - 0.1)
}

/// Piecewise outcome trend of the weighted covariate `X*`.
pub fn f_bipartite(x: f64) -> f64 {
    let mut v = 4.0;
    if x < -1.0 {
        v -= 2.0;
    } else if x < -0.25 {
        v += 2.0 * x;
    } else if x < 0.5 {
        v += -0.1875 - 5.0 * x * x;
    } else {
        v -= 1.4375;
    }
    v
}

/// Truncated normal on `[−bound, bound]` with mean 0, by inverse CDF of a
/// uniform restricted to the truncation band.
#[derive(Debug, Clone)]
pub struct TruncatedNormal {
    normal: Normal,
    lo: f64,
    hi: f64,
}

impl TruncatedNormal {
    pub fn new(sd: f64, bound: f64) -> Self {
        let normal = Normal::new(0.0, sd).expect("positive standard deviation");
        Self {
            lo: normal.cdf(-bound),
            hi: normal.cdf(bound),
            normal,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = self.lo + (self.hi - self.lo) * rng.random::<f64>();
        self.normal.inverse_cdf(u)
    }

    /// `E[f(X)]` by Simpson's rule on the truncated density.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        let a = self.normal.inverse_cdf(self.lo);
        let b = self.normal.inverse_cdf(self.hi);
        let m = 20_000usize;
        let h = (b - a) / m as f64;
        let mass = self.hi - self.lo;
        let g = |x: f64| f(x) * statrs::distribution::Continuous::pdf(&self.normal, x) / mass;
        let mut s = g(a) + g(b);
        for k in 1..m {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * g(a + k as f64 * h);
        }
        s * h / 3.0
    }
}

#[derive(Debug, Clone)]
pub struct BipartiteDesign {
    w: InterferenceMatrix,
    projection: WeightedGraph,
    errors: ErrorModel,
    effect: f64,
    covariate_law: TruncatedNormal,
    p1: Vec<f64>,
}

fn threshold_probability(
    row: &[(usize, f64)],
    probs: &(dyn Fn(usize) -> f64 + Sync),
    unit: usize,
) -> f64 {
    let mapping = ExposureMapping::threshold_inclusive(0.5);
    let rows = [row];
    let history = [1u8];
    let query = HistoryQuery {
        rows: &rows,
        mapping: &mapping,
        history: &history,
        unit,
    };
    let propensity = |j: usize, _t: usize| probs(j);
    exhaustive_exposure_propensity(&propensity, &query)
        .expect("interference rows are validated at construction")
}

impl BipartiteDesign {
    /// `rows` keeps the first outcome units of the file (all when `None`).
    pub fn from_file(
        path: &Path,
        rows: Option<usize>,
        errors: ErrorMode,
        effect: f64,
    ) -> Result<Self, SimError> {
        if !path.exists() {
            return Err(SimError::MissingMatrixFile(path.to_path_buf()));
        }
        let w = read_interference(path).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let w = match rows {
            Some(r) if r < w.row_count() => w.truncate_rows(r),
            _ => w,
        };
        Self::new(w, errors, effect)
    }

    pub fn new(w: InterferenceMatrix, errors: ErrorMode, effect: f64) -> Result<Self, SimError> {
        let w = w.row_normalized();
        for i in 0..w.row_count() {
            if w.row(i).is_empty() {
                return Err(SimError::InvalidConfig(format!(
                    "outcome unit {i} has no intervention units"
                )));
            }
            if w.row(i).len() > crate::nuisance::MAX_EXHAUSTIVE {
                return Err(SimError::InvalidConfig(format!(
                    "outcome unit {i} has {} intervention units, too many to enumerate",
                    w.row(i).len()
                )));
            }
        }
        let projection = project_bipartite(&w);
        let errors = match errors {
            ErrorMode::Independent => ErrorModel::Independent,
            ErrorMode::Dependent => ErrorModel::Dense(DenseSampler::indicator_kernel(
                &projection,
                ERROR_SCALE,
                ERROR_CUTOFF,
            )?),
        };
        let covariate_law = TruncatedNormal::new(X_SD, X_BOUND);
        let q = covariate_law.expectation(treatment_probability);
        let p1 = (0..w.row_count())
            .map(|i| threshold_probability(w.row(i), &|_| q, i))
            .collect();
        Ok(Self {
            w,
            projection,
            errors,
            effect,
            covariate_law,
            p1,
        })
    }

    pub fn matrix(&self) -> &InterferenceMatrix {
        &self.w
    }
}

impl Design for BipartiteDesign {
    fn unit_count(&self) -> usize {
        self.w.row_count()
    }

    fn distances(&self) -> &dyn DistanceSource {
        &self.projection
    }

    fn generate(&self, replicate_seed: u64) -> Result<SimDataset, SimError> {
        let n = self.w.row_count();
        let m = self.w.col_count();
        let mut rng = seed::rng_for(replicate_seed, 0);
        let x: Vec<f64> = (0..m)
            .map(|_| self.covariate_law.sample(&mut rng))
            .collect();
        let probs: Vec<f64> = x.iter().map(|&v| treatment_probability(v)).collect();
        let z: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
        let mut err_rng = seed::rng_for(replicate_seed, 1);
        let eps = self.errors.draw(n, &mut err_rng);

        let mut truth = OracleTruth::with_capacity(n);
        let mut covariates = Vec::with_capacity(n);
        let mut exposed = Vec::with_capacity(n);
        let mut delta_y = Vec::with_capacity(n);
        for i in 0..n {
            let row = self.w.row(i);
            let share: f64 = row.iter().filter(|&&(j, _)| z[j]).map(|&(_, w)| w).sum();
            let g = share >= 0.5;
            let x_star: f64 = row.iter().map(|&(j, w)| w * x[j]).sum();
            let f = f_bipartite(x_star);
            let pi = threshold_probability(row, &|j| probs[j], i);
            truth.pi_target.push(pi);
            truth.pi_reference.push(1.0 - pi);
            truth.mu.push(f);
            truth.p1.push(self.p1[i]);
            truth.aee_i.push(self.effect);
            exposed.push(g);
            delta_y.push(self.effect * g as u8 as f64 + f + eps[i]);
            covariates.push(vec![x_star]);
        }
        truth.aee = self.effect;
        let reference = exposed.iter().map(|&g| !g).collect();
        Ok(SimDataset {
            delta_y,
            exposed,
            reference,
            covariates,
            truth,
            features: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::fixture::synthetic_interference;

    #[test]
    fn knots_are_continuous() {
        for (knot, value) in [(-1.0, 2.0), (-0.25, 3.5), (0.5, 2.5625)] {
            let left = f_bipartite(knot - 1e-12);
            let right = f_bipartite(knot);
            assert!((left - value).abs() < 1e-9, "left of {knot}: {left}");
            assert!((right - value).abs() < 1e-9, "at {knot}: {right}");
        }
    }

    #[test]
    fn truncated_normal_stays_in_band() {
        let law = TruncatedNormal::new(X_SD, X_BOUND);
        let mut rng = seed::rng(2);
        let draws: Vec<f64> = (0..20_000).map(|_| law.sample(&mut rng)).collect();
        assert!(draws.iter().all(|x| x.abs() <= X_BOUND));
        // nearly flat: variance close to the uniform value 0.75
        let var = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
        assert!((var - 0.75).abs() < 0.03, "{var}");
        let mean = law.expectation(|x| x);
        assert!(mean.abs() < 1e-12);
        assert!((law.expectation(|_| 1.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rows_are_normalized() {
        let w = synthetic_interference(120, 30, 4, 17);
        let d = BipartiteDesign::new(w, ErrorMode::Independent, 5.0).unwrap();
        for i in 0..d.matrix().row_count() {
            let s: f64 = d.matrix().row(i).iter().map(|&(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let data = d.generate(1).unwrap();
        assert_eq!(data.delta_y.len(), 120);
        assert!(data.exposed.iter().any(|&g| g) && data.exposed.iter().any(|&g| !g));
    }
}
