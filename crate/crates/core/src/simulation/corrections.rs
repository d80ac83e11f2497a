//! Oracle bias and variance terms under effect and probability
//! heterogeneity. They need the true unit effects and exposure
//! probabilities, so they exist only in simulation.

use serde::Serialize;

use super::SimError;
use crate::estimator::{kernel_quadratic_form, Kernel};
use crate::graph::DistanceSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleCorrections {
    /// `n⁻¹ Σ (p_i − p̄)/p̄ · AEE_i`, i.e. `Cov_n(AEE_i, p_i) / p̄`.
    pub s1: f64,
    /// `n⁻¹ Σ (p_i − p̂)/p̂ · AEE_i` with the empirical exposure share `p̂`.
    pub s1_hat: f64,
    /// `AEE · n^{-1/2} Σ (p̂ − p_i)/p̂ + n^{1/2} Ŝ1`.
    pub s2: f64,
    /// Kernel-weighted sum of `(AEE_i − AEE)(AEE_k − AEE)` over pairs within
    /// the bandwidth, divided by `n`.
    pub v_n: f64,
    /// The same sum over every pair of units regardless of distance.
    pub v_n_all_pairs: f64,
}

/// Evaluates the oracle terms. `p_emp` is needed only for `s1_hat` and `s2`.
pub fn oracle_corrections(
    aee_i: Option<&[f64]>,
    p_true: Option<&[f64]>,
    p_emp: f64,
    distances: &dyn DistanceSource,
    kernel: Kernel,
    bandwidth: f64,
) -> Result<OracleCorrections, SimError> {
    let (aee_i, p) = match (aee_i, p_true) {
        (Some(a), Some(p)) => (a, p),
        _ => return Err(SimError::OracleUnavailable),
    };
    let n = aee_i.len();
    if p.len() != n || n == 0 {
        return Err(SimError::InvalidConfig(
            "oracle effects and probabilities differ in length".into(),
        ));
    }
    let nf = n as f64;
    let p_bar = p.iter().sum::<f64>() / nf;
    let aee = aee_i.iter().sum::<f64>() / nf;
    let s1 = aee_i
        .iter()
        .zip(p)
        .map(|(a, pi)| (pi - p_bar) / p_bar * a)
        .sum::<f64>()
        / nf;
    let s1_hat = aee_i
        .iter()
        .zip(p)
        .map(|(a, pi)| (pi - p_emp) / p_emp * a)
        .sum::<f64>()
        / nf;
    let s2 =
        aee * p.iter().map(|pi| (p_emp - pi) / p_emp).sum::<f64>() / nf.sqrt() + nf.sqrt() * s1_hat;
    let centered: Vec<f64> = aee_i.iter().map(|a| a - aee).collect();
    let v_n = kernel_quadratic_form(&centered, distances, kernel, bandwidth)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let v_n_all_pairs = centered.iter().sum::<f64>().powi(2) / nf;
    Ok(OracleCorrections {
        s1,
        s1_hat,
        s2,
        v_n,
        v_n_all_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Isolated;

    #[test]
    fn homogeneous_effects_vanish() {
        let aee = vec![5.0; 10];
        let p: Vec<f64> = (0..10).map(|i| 0.3 + 0.04 * i as f64).collect();
        let c = oracle_corrections(
            Some(&aee),
            Some(&p),
            0.5,
            &Isolated(10),
            Kernel::Uniform,
            0.0,
        )
        .unwrap();
        assert_eq!(c.v_n, 0.0);
        assert!(c.s1.abs() < 1e-15);
    }

    #[test]
    fn homogeneous_probabilities_vanish() {
        let aee: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let p = vec![0.5; 10];
        let c = oracle_corrections(
            Some(&aee),
            Some(&p),
            0.5,
            &Isolated(10),
            Kernel::Uniform,
            0.0,
        )
        .unwrap();
        assert_eq!(c.s1, 0.0);
        let mean = 4.5;
        let var = aee.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 10.0;
        assert!((c.v_n - var).abs() < 1e-12);
    }

    #[test]
    fn missing_truth() {
        assert!(matches!(
            oracle_corrections(None, None, 0.5, &Isolated(1), Kernel::Uniform, 0.0),
            Err(SimError::OracleUnavailable)
        ));
    }
}
