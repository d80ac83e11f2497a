//! Ring network design: seven-unit windows, threshold exposure.

use rand::Rng;
use rand_distr::StandardNormal;

use super::errors::{CirculantSampler, ErrorModel};
use super::{Design, ErrorMode, OracleTruth, SimDataset, SimError};
use crate::exposure::{Exposure, ExposureMapping};
use crate::graph::DistanceSource;
use crate::nuisance::{exhaustive_exposure_propensity, expit, HistoryQuery};
use crate::seed;

/// Half-width of the interference window.
pub const RADIUS: usize = 3;
pub const WINDOW: usize = 2 * RADIUS + 1;
/// Treated units needed among the seven for exposure.
pub const EXPOSURE_COUNT: usize = 4;
pub const ERROR_CORRELATION: f64 = 0.6;

pub fn treatment_probability(x: f64) -> f64 {
    expit(0.5 * ((x - 2.0).powi(2)).sin())
}

/// Outcome trend from the window `x[0..7]` = `X_{i−3}, …, X_{i+3}`.
pub fn f_ring(x: &[f64]) -> f64 {
    let [a, b, c, d, e, f, g] = [x[0], x[1], x[2], x[3], x[4], x[5], x[6]];
    let third = if c > 0.0 {
        c.exp().min(3f64.exp())
    } else {
        0.0
    };
    a + 2.0 * b * b + third - 5.0 * (d < 0.0) as u8 as f64 + 2.0 * (e > 0.0) as u8 as f64
        - (f * g).sin()
}

/// Cycle distance `min(|i − k|, n − |i − k|)` in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingDistance(pub usize);

impl RingDistance {
    pub fn distance(&self, i: usize, k: usize) -> usize {
        let d = i.abs_diff(k);
        d.min(self.0 - d)
    }
}

impl DistanceSource for RingDistance {
    fn node_count(&self) -> usize {
        self.0
    }

    fn within(&self, source: usize, radius: f64) -> Vec<(usize, f64)> {
        let n = self.0;
        let r = (radius.floor() as usize).min(n / 2);
        let mut out = vec![(source, 0.0)];
        for s in 1..=r {
            let right = (source + s) % n;
            let left = (source + n - s) % n;
            out.push((right, s as f64));
            if left != right {
                out.push((left, s as f64));
            }
        }
        out
    }
}

/// Indices `i−3, …, i+3` modulo `n`.
pub fn window(i: usize, n: usize) -> [usize; WINDOW] {
    std::array::from_fn(|k| (i + n + k - RADIUS) % n)
}

/// `P(Bin(7, q) ≥ 4)` with `q = E[p(X)]`, `X ~ N(0, 1)`, by Simpson's rule.
pub fn marginal_exposure_probability() -> f64 {
    let q = normal_expectation(treatment_probability);
    (EXPOSURE_COUNT..=WINDOW)
        .map(|k| binomial(WINDOW, k) * q.powi(k as i32) * (1.0 - q).powi((WINDOW - k) as i32))
        .sum()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

pub(crate) fn normal_expectation(f: impl Fn(f64) -> f64) -> f64 {
    let (a, b, m) = (-12.0, 12.0, 48_000usize);
    let h = (b - a) / m as f64;
    let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let g = |x: f64| f(x) * density(x);
    let mut s = g(a) + g(b);
    for k in 1..m {
        let x = a + k as f64 * h;
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * g(x);
    }
    s * h / 3.0
}

#[derive(Debug, Clone)]
pub struct RingDesign {
    n: usize,
    effect: f64,
    errors: ErrorModel,
    distances: RingDistance,
    p1: f64,
    /// Drops `f_ring` and the errors, leaving only the exposure effect.
    pub noise_free: bool,
}

impl RingDesign {
    pub fn new(n: usize, errors: ErrorMode, effect: f64) -> Result<Self, SimError> {
        if n < WINDOW + 1 {
            return Err(SimError::InvalidConfig(format!(
                "ring needs at least {} units, got {n}",
                WINDOW + 1
            )));
        }
        let errors = match errors {
            ErrorMode::Independent => ErrorModel::Independent,
            ErrorMode::Dependent => {
                ErrorModel::Circulant(CirculantSampler::ring(n, ERROR_CORRELATION))
            }
        };
        Ok(Self {
            n,
            effect,
            errors,
            distances: RingDistance(n),
            p1: marginal_exposure_probability(),
            noise_free: false,
        })
    }
}

/// Exact `P(G_i = 1 | X)` given per-unit treatment probabilities, by
/// enumerating the window's 2⁷ treatment configurations.
pub fn window_exposure_probability(probs: &[f64], i: usize, mapping: &ExposureMapping) -> f64 {
    let n = probs.len();
    let row: Vec<(usize, f64)> = window(i, n).iter().map(|&j| (j, 1.0 / 7.0)).collect();
    let rows = [row.as_slice()];
    let history: [Exposure; 1] = [1];
    let query = HistoryQuery {
        rows: &rows,
        mapping,
        history: &history,
        unit: i,
    };
    let propensity = |j: usize, _t: usize| probs[j];
    exhaustive_exposure_propensity(&propensity, &query)
        .expect("a seven-unit window is always enumerable")
}

impl Design for RingDesign {
    fn unit_count(&self) -> usize {
        self.n
    }

    fn distances(&self) -> &dyn DistanceSource {
        &self.distances
    }

    fn generate(&self, replicate_seed: u64) -> Result<SimDataset, SimError> {
        let n = self.n;
        let mut rng = seed::rng_for(replicate_seed, 0);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let probs: Vec<f64> = x.iter().map(|&v| treatment_probability(v)).collect();
        let z: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
        let mut err_rng = seed::rng_for(replicate_seed, 1);
        let eps = self.errors.draw(n, &mut err_rng);
        let mapping = ExposureMapping::threshold(0.5);

        let mut covariates = Vec::with_capacity(n);
        let mut truth = OracleTruth::with_capacity(n);
        let mut exposed = Vec::with_capacity(n);
        let mut delta_y = Vec::with_capacity(n);
        for i in 0..n {
            let w = window(i, n);
            let xs: Vec<f64> = w.iter().map(|&j| x[j]).collect();
            let treated = w.iter().filter(|&&j| z[j]).count();
            let g = treated >= EXPOSURE_COUNT;
            let f = f_ring(&xs);
            let y = if self.noise_free {
                self.effect * g as u8 as f64
            } else {
                self.effect * g as u8 as f64 + f + eps[i]
            };
            // the baseline period is untreated, so the two histories
            // (0,1) and (0,0) partition the outcome space
            let pi = window_exposure_probability(&probs, i, &mapping);
            truth.pi_target.push(pi);
            truth.pi_reference.push(1.0 - pi);
            truth.mu.push(if self.noise_free { 0.0 } else { f });
            truth.p1.push(self.p1);
            truth.aee_i.push(self.effect);
            exposed.push(g);
            delta_y.push(y);
            covariates.push(xs);
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
