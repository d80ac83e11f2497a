//! Gaussian outcome errors, independent or with a network covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::SimError;
use crate::graph::DistanceSource;

/// Stationary errors on a cycle with `Cov(ε_i, ε_k) = ρ^{d(i,k)}`.
///
/// The covariance is circulant, so its eigenvalues are the DFT of the first
/// row and a draw costs one FFT.
#[derive(Debug, Clone)]
pub struct CirculantSampler {
    /// `sqrt(λ_j / n)`, with negative eigenvalues clipped to zero.
    scale: Vec<f64>,
}

impl CirculantSampler {
    pub fn ring(n: usize, rho: f64) -> Self {
        let first_row: Vec<f64> = (0..n).map(|k| rho.powi(k.min(n - k) as i32)).collect();
        Self::from_first_row(&first_row)
    }

    pub fn from_first_row(first_row: &[f64]) -> Self {
        let n = first_row.len();
        let mut buf: Vec<Complex<f64>> = first_row.iter().map(|&c| Complex::new(c, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let mut clipped = 0;
        let scale = buf
            .iter()
            .map(|l| {
                if l.re < 0.0 {
                    clipped += 1;
                }
                (l.re.max(0.0) / n as f64).sqrt()
            })
            .collect();
        if clipped > 0 {
            log::warn!("circulant embedding: {clipped} negative eigenvalues clipped");
        }
        Self { scale }
    }

    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }

    /// Real part of `FFT(sqrt(λ/n) ⊙ (a + ib))` with `a, b` standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.scale.len();
        let mut buf: Vec<Complex<f64>> = self
            .scale
            .iter()
            .map(|&s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex::new(s * a, s * b)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }
}

/// A fixed factor `L` with `L Lᵀ = Σ` for dense multivariate normal draws.
#[derive(Debug, Clone)]
pub struct DenseSampler {
    factor: DMatrix<f64>,
    pub clipped_eigenvalues: usize,
}

impl DenseSampler {
    /// Cholesky when `Σ` is positive definite, otherwise a symmetric
    /// eigendecomposition with negative eigenvalues set to zero.
    pub fn new(cov: DMatrix<f64>) -> Result<Self, SimError> {
        if !cov.is_square() {
            return Err(SimError::InvalidConfig("covariance must be square".into()));
        }
        if let Some(chol) = cov.clone().cholesky() {
            return Ok(Self {
                factor: chol.l(),
                clipped_eigenvalues: 0,
            });
        }
        let eig = cov.symmetric_eigen();
        let scale = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let clipped = eig
            .eigenvalues
            .iter()
            .filter(|&&v| v < -1e-10 * scale.max(1.0))
            .count();
        if clipped > 0 {
            log::warn!(
                "{}",
                SimError::NotPositiveSemidefinite { negative: clipped }
            );
            log::warn!("falling back to eigenvalue clipping");
        }
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self {
            factor,
            clipped_eigenvalues: clipped,
        })
    }

    /// `Σ = c · 1(d(i,k) < cutoff)` over the given distances.
    pub fn indicator_kernel(
        distances: &dyn DistanceSource,
        scale: f64,
        cutoff: f64,
    ) -> Result<Self, SimError> {
        let n = distances.node_count();
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            for (k, d) in distances.within(i, cutoff) {
                if d < cutoff {
                    cov[(i, k)] = scale;
                    cov[(k, i)] = scale;
                }
            }
        }
        Self::new(cov)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.factor.ncols();
        let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.factor * xi).iter().copied().collect()
    }
}

pub fn independent<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// How a design draws its errors.
#[derive(Debug, Clone)]
pub enum ErrorModel {
    Independent,
    Circulant(CirculantSampler),
    Dense(DenseSampler),
}

impl ErrorModel {
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            ErrorModel::Independent => independent(n, rng),
            ErrorModel::Circulant(s) => s.sample(rng),
            ErrorModel::Dense(s) => s.sample(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn ring_errors_have_target_moments() {
        let n = 50;
        let sampler = CirculantSampler::ring(n, 0.6);
        let mut rng = seed::rng(11);
        let draws = 10_000;
        let mut var = 0.0;
        let mut lag1 = 0.0;
        for _ in 0..draws {
            let e = sampler.sample(&mut rng);
            var += e.iter().map(|v| v * v).sum::<f64>() / n as f64;
            lag1 += (0..n).map(|i| e[i] * e[(i + 1) % n]).sum::<f64>() / n as f64;
        }
        var /= draws as f64;
        lag1 /= draws as f64;
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
        assert!(
            (lag1 / var - 0.6).abs() < 0.03,
            "lag-1 correlation {}",
            lag1 / var
        );
    }

    #[test]
    fn dense_sampler_diagonal() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.3]);
        let s = DenseSampler::new(cov).unwrap();
        assert_eq!(s.clipped_eigenvalues, 0);
        let mut rng = seed::rng(3);
        let draws = 10_000;
        let mut diag = [0.0; 3];
        for _ in 0..draws {
            let e = s.sample(&mut rng);
            for k in 0..3 {
                diag[k] += e[k] * e[k] / draws as f64;
            }
        }
        for (d, t) in diag.iter().zip([2.0, 1.0, 0.3]) {
            assert!((d - t).abs() < 0.08 * t, "{d} vs {t}");
        }
    }

    #[test]
    fn non_psd_is_clipped() {
        // path 0-1-2 with unit weights on pairs at distance <= 1
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let s = DenseSampler::new(cov).unwrap();
        assert_eq!(s.clipped_eigenvalues, 1);
    }

    #[test]
    fn independent_errors_uncorrelated() {
        let mut rng = seed::rng(5);
        let draws = 10_000;
        let mut c = 0.0;
        for _ in 0..draws {
            let e = independent(2, &mut rng);
            c += e[0] * e[1];
        }
        c /= draws as f64;
        assert!(c.abs() < 3.0 / (draws as f64).sqrt());
    }
}
