//! Logistic regression by IRLS and least squares by QR.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{FitWarning, NuisanceError};

/// Ridge added to a singular normal matrix before retrying.
pub const RIDGE: f64 = 1e-8;

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    /// Max-norm of `Xᵀ(y − p̂)` at the returned coefficients.
    pub score_norm: f64,
    pub warnings: Vec<FitWarning>,
}

impl LogisticFit {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        expit(dot(&self.coefficients, x))
    }

    pub fn predict(&self, design: &DMatrix<f64>) -> Vec<f64> {
        let beta = DVector::from_column_slice(&self.coefficients);
        (design * beta).iter().map(|&e| expit(e)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_likelihood(eta: &DVector<f64>, y: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| {
            // y·η − log(1 + e^η), computed without overflow
            let softplus = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            yi * e - softplus
        })
        .sum()
}

/// Solves `(A + λI) x = b` by Cholesky, adding the ridge only when plain
/// Cholesky fails.
fn solve_spd(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    warnings: &mut Vec<FitWarning>,
) -> Result<DVector<f64>, NuisanceError> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let scale = a.diagonal().amax().max(1.0);
    let ridged = a + DMatrix::identity(a.nrows(), a.ncols()) * (RIDGE * scale);
    let chol = ridged.cholesky().ok_or(NuisanceError::RankDeficient)?;
    if !warnings.contains(&FitWarning::RidgeApplied) {
        log::warn!("singular normal matrix; ridge {RIDGE} applied");
        warnings.push(FitWarning::RidgeApplied);
    }
    Ok(chol.solve(b))
}

/// Maximizes the Bernoulli log-likelihood by Newton/IRLS with step halving.
///
/// Converges when `‖Xᵀ(y − p̂)‖∞ <= tol`. Perfectly separated data produce a
/// finite fit flagged with [`FitWarning::Separation`].
pub fn fit_logistic_irls(
    x: &DMatrix<f64>,
    y: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<LogisticFit, NuisanceError> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(NuisanceError::DimensionMismatch(format!(
            "{n} design rows but {} responses",
            y.len()
        )));
    }
    if n == 0 {
        return Err(NuisanceError::EmptyTrainingSet);
    }
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(NuisanceError::InvalidResponse(*bad));
    }
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(d);
    let mut warnings = Vec::new();
    let mut eta = x * &beta;
    let mut ll = log_likelihood(&eta, y);
    for iter in 0..=max_iter {
        let p = eta.map(expit);
        let grad = x.transpose() * (&yv - &p);
        let score_norm = grad.amax();
        if score_norm <= tol {
            if eta.iter().any(|e| e.abs() > 30.0) && perfectly_separated(&eta, y) {
                log::warn!("logistic fit: data are perfectly separated");
                warnings.push(FitWarning::Separation);
            }
            return Ok(LogisticFit {
                coefficients: beta.iter().copied().collect(),
                iterations: iter,
                score_norm,
                warnings,
            });
        }
        if iter == max_iter {
            break;
        }
        let w = p.map(|pi| (pi * (1.0 - pi)).max(1e-300));
        let mut xtwx = DMatrix::zeros(d, d);
        for (i, row) in x.row_iter().enumerate() {
            let r = row.transpose();
            xtwx.ger(w[i], &r, &r, 1.0);
        }
        let step = solve_spd(&xtwx, &grad, &mut warnings)?;
        let mut scale = 1.0;
        loop {
            let candidate = &beta + &step * scale;
            let cand_eta = x * &candidate;
            let cand_ll = log_likelihood(&cand_eta, y);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) || scale < 1e-8 {
                beta = candidate;
                eta = cand_eta;
                ll = cand_ll;
                break;
            }
            scale *= 0.5;
        }
    }
    Err(NuisanceError::Nonconvergence {
        iterations: max_iter,
    })
}

fn perfectly_separated(eta: &DVector<f64>, y: &[f64]) -> bool {
    eta.iter()
        .zip(y)
        .all(|(&e, &yi)| (yi == 1.0 && e > 0.0) || (yi == 0.0 && e < 0.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub warnings: Vec<FitWarning>,
}

impl OlsFit {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        dot(&self.coefficients, x)
    }
}

/// Least squares through a thin QR decomposition; rank-deficient designs
/// fall back to ridge-stabilized normal equations.
pub fn fit_linear_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit, NuisanceError> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(NuisanceError::DimensionMismatch(format!(
            "{n} design rows but {} responses",
            y.len()
        )));
    }
    if n == 0 {
        return Err(NuisanceError::EmptyTrainingSet);
    }
    let yv = DVector::from_column_slice(y);
    let mut warnings = Vec::new();
    if n >= d {
        let qr = x.clone().qr();
        let r = qr.r();
        let diag_max = (0..d).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
        let full_rank = diag_max > 0.0 && (0..d).all(|k| r[(k, k)].abs() > 1e-10 * diag_max);
        if full_rank {
            let qty = qr.q().transpose() * &yv;
            if let Some(beta) = r.solve_upper_triangular(&qty) {
                return Ok(OlsFit {
                    coefficients: beta.iter().copied().collect(),
                    warnings,
                });
            }
        }
    }
    let xtx = x.transpose() * x;
    let xty = x.transpose() * &yv;
    let ridged = &xtx + DMatrix::identity(d, d) * (RIDGE * xtx.diagonal().amax().max(1.0));
    let chol = ridged.cholesky().ok_or(NuisanceError::RankDeficient)?;
    log::warn!("rank-deficient least-squares design; ridge {RIDGE} applied");
    warnings.push(FitWarning::RidgeApplied);
    Ok(OlsFit {
        coefficients: chol.solve(&xty).iter().copied().collect(),
        warnings,
    })
}

/// Prepends a column of ones.
pub fn with_intercept(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(
        rows.len(),
        d + 1,
        |i, k| if k == 0 { 1.0 } else { rows[i][k - 1] },
    )
}
