//! Synthetic designs with known truths and replication studies.
//!
//! A [`Design`] produces one dataset per replicate seed together with its
//! oracle nuisances. A [`Scenario`] pairs a design with a nuisance strategy
//! and a list of estimator [`Variant`]s that are all applied to the same
//! simulated data.

pub mod bipartite;
pub mod corrections;
pub mod errors;
pub mod fixture;
pub mod heterogeneous;
pub mod qq;
pub mod ring;
pub mod study;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corrections::{oracle_corrections, OracleCorrections};
pub use heterogeneous::HetScenario;
pub use qq::{qq_data, qq_fit};
pub use study::{run_replications, ReplicationSummary, StudyConfig, StudyResult};

use crate::graph::DistanceSource;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("invalid simulation settings: {0}")]
    InvalidConfig(String),
    #[error("interference matrix file not found: {0}")]
    MissingMatrixFile(PathBuf),
    #[error("covariance has {negative} negative eigenvalues")]
    NotPositiveSemidefinite { negative: usize },
    #[error("{got} replicates available, at least {needed} needed")]
    TooFewReplicates { got: usize, needed: usize },
    #[error("oracle truths are only available for simulated data")]
    OracleUnavailable,
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    Independent,
    Dependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Ring,
    /// Interference matrix read from a sparse CSV, keeping the first `rows`
    /// outcome units.
    Bipartite {
        path: PathBuf,
        rows: Option<usize>,
    },
    HeterogeneousRing(HetScenario),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub topology: Topology,
    pub n: usize,
    pub errors: ErrorMode,
    /// Exposure effect of the homogeneous designs.
    pub effect: f64,
    /// Study-level seed; fixes the heterogeneity draws.
    pub seed: u64,
}

/// True nuisances and effects of one simulated dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleTruth {
    pub pi_target: Vec<f64>,
    pub pi_reference: Vec<f64>,
    pub mu: Vec<f64>,
    pub p1: Vec<f64>,
    pub aee_i: Vec<f64>,
    pub aee: f64,
}

impl OracleTruth {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            pi_target: Vec::with_capacity(n),
            pi_reference: Vec::with_capacity(n),
            mu: Vec::with_capacity(n),
            p1: Vec::with_capacity(n),
            aee_i: Vec::with_capacity(n),
            aee: 0.0,
        }
    }
}

/// Two-period data: `exposed` marks history (0,1), `reference` (0,0).
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub delta_y: Vec<f64>,
    pub exposed: Vec<bool>,
    pub reference: Vec<bool>,
    /// Learner inputs per outcome unit.
    pub covariates: Vec<Vec<f64>>,
    pub truth: OracleTruth,
    /// Network features for a parametric exposure-probability model.
    pub features: Option<nalgebra::DMatrix<f64>>,
}

pub trait Design: Send + Sync {
    fn unit_count(&self) -> usize;
    fn distances(&self) -> &dyn DistanceSource;
    fn generate(&self, replicate_seed: u64) -> Result<SimDataset, SimError>;
}

pub fn build_design(config: &DgpConfig) -> Result<Box<dyn Design>, SimError> {
    Ok(match &config.topology {
        Topology::Ring => Box::new(ring::RingDesign::new(
            config.n,
            config.errors,
            config.effect,
        )?),
        Topology::Bipartite { path, rows } => Box::new(bipartite::BipartiteDesign::from_file(
            path,
            *rows,
            config.errors,
            config.effect,
        )?),
        Topology::HeterogeneousRing(s) => Box::new(heterogeneous::HeterogeneousDesign::new(
            *s,
            config.n,
            config.seed,
        )?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiMode {
    Oracle,
    /// `π̂ ≡ 0.5` for both histories.
    Half,
    Logistic,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    Oracle,
    Zero,
    Linear,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum P1Mode {
    Empirical,
    /// Logistic model on the design's network features.
    NetworkModel,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    None,
    /// Subtract the oracle `V_n` from the variance.
    VarOnly,
    /// Subtract `S1` from the estimate and `V_n` from the variance.
    BiasVar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub bandwidth: f64,
    pub p1: P1Mode,
    pub correction: Correction,
}

impl Variant {
    pub fn bandwidth(b: f64) -> Self {
        Self {
            label: format!("b={b}"),
            bandwidth: b,
            p1: P1Mode::Empirical,
            correction: Correction::None,
        }
    }

    fn fixed(label: &str, p1: P1Mode, correction: Correction) -> Self {
        Self {
            label: label.into(),
            bandwidth: 0.0,
            p1,
            correction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub topology: Topology,
    pub errors: ErrorMode,
    pub pi: PiMode,
    pub mu: MuMode,
    pub variants: Vec<Variant>,
}

pub const RING_N: usize = 2000;
pub const RING_N_FULL: usize = 5000;
pub const REPS: usize = 500;
pub const REPS_FULL: usize = 1000;
pub const EFFECT: f64 = 5.0;

/// Every scenario name accepted by [`scenario`].
pub fn scenario_names() -> Vec<String> {
    let mut names = Vec::new();
    for topo in ["ring", "bipart"] {
        for err in ["ind", "dep"] {
            for nuis in ["oracle", "glm", "kernel", "mu0", "pi05"] {
                names.push(format!("{topo}-{err}-{nuis}"));
            }
        }
    }
    for s in ["supp-homog", "supp-indep", "supp-corr", "supp-corr-pg"] {
        names.push(s.into());
    }
    names
}

/// Looks a scenario up by name. `matrix` overrides the bipartite fixture.
pub fn scenario(name: &str, matrix: Option<PathBuf>) -> Result<Scenario, SimError> {
    let unknown = || SimError::UnknownScenario(name.to_string());
    let supp = |het: HetScenario, variants: Vec<Variant>| Scenario {
        name: name.to_string(),
        topology: Topology::HeterogeneousRing(het),
        errors: ErrorMode::Independent,
        pi: PiMode::Oracle,
        mu: MuMode::Oracle,
        variants,
    };
    let uncorrected = Variant::fixed("uncorrected", P1Mode::Empirical, Correction::None);
    let bias_var = Variant::fixed("bias+var", P1Mode::Empirical, Correction::BiasVar);
    match name {
        "supp-homog" => {
            return Ok(supp(
                HetScenario::EffectOnly,
                vec![
                    uncorrected,
                    Variant::fixed("var-only", P1Mode::Empirical, Correction::VarOnly),
                ],
            ))
        }
        "supp-indep" => return Ok(supp(HetScenario::Independent, vec![uncorrected, bias_var])),
        "supp-corr" => return Ok(supp(HetScenario::Correlated, vec![uncorrected, bias_var])),
        "supp-corr-pg" => {
            return Ok(supp(
                HetScenario::Correlated,
                vec![
                    uncorrected,
                    bias_var,
                    Variant::fixed(
                        "parametric-var-only",
                        P1Mode::NetworkModel,
                        Correction::VarOnly,
                    ),
                ],
            ))
        }
        _ => {}
    }
    let parts: Vec<&str> = name.split('-').collect();
    let [topo, err, nuis] = parts[..] else {
        return Err(unknown());
    };
    let errors = match err {
        "ind" => ErrorMode::Independent,
        "dep" => ErrorMode::Dependent,
        _ => return Err(unknown()),
    };
    let (pi, mu) = match nuis {
        "oracle" => (PiMode::Oracle, MuMode::Oracle),
        "glm" => (PiMode::Logistic, MuMode::Linear),
        "kernel" => (PiMode::Kernel, MuMode::Kernel),
        "mu0" => (PiMode::Oracle, MuMode::Zero),
        "pi05" => (PiMode::Half, MuMode::Oracle),
        _ => return Err(unknown()),
    };
    let (topology, dep_bandwidth) = match topo {
        "ring" => (Topology::Ring, 15.0),
        "bipart" => (
            Topology::Bipartite {
                path: matrix.unwrap_or_else(|| PathBuf::from(fixture::FIXTURE_PATH)),
                rows: Some(fixture::DEFAULT_ROWS),
            },
            bipartite::ERROR_CUTOFF,
        ),
        _ => return Err(unknown()),
    };
    let variants = match errors {
        ErrorMode::Independent => vec![Variant::bandwidth(0.0)],
        ErrorMode::Dependent => vec![Variant::bandwidth(dep_bandwidth), Variant::bandwidth(0.0)],
    };
    Ok(Scenario {
        name: name.to_string(),
        topology,
        errors,
        pi,
        mu,
        variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_scenario_parses() {
        for name in scenario_names() {
            let s = scenario(&name, None).unwrap();
            assert_eq!(s.name, name);
            assert!(!s.variants.is_empty());
        }
        assert!(matches!(
            scenario("ring-ind", None),
            Err(SimError::UnknownScenario(_))
        ));
        assert!(scenario("ring-foo-oracle", None).is_err());
    }

    #[test]
    fn dependent_scenarios_carry_two_bandwidths() {
        let s = scenario("ring-dep-oracle", None).unwrap();
        let b: Vec<f64> = s.variants.iter().map(|v| v.bandwidth).collect();
        assert_eq!(b, vec![15.0, 0.0]);
        let s = scenario("supp-corr-pg", None).unwrap();
        assert_eq!(s.variants.len(), 3);
    }
}
