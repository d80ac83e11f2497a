//! Replication studies and their summaries.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::corrections::oracle_corrections;
use super::qq::{qq_data, MIN_QQ_POINTS};
use super::{
    build_design, Correction, Design, DgpConfig, MuMode, P1Mode, PiMode, Scenario, SimDataset,
    SimError, Topology, Variant, EFFECT,
};
use crate::estimator::{estimate, wald_ci, EstimationSample, EstimatorConfig, Kernel};
use crate::nuisance::{
    empirical_exposure_prob, fit_network_exposure_prob, Learner, NuisanceBundle, P1Source,
    DEFAULT_EPSILON,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub epsilon: f64,
    pub ci_level: f64,
}

impl StudyConfig {
    pub fn new(scenario: Scenario, n: usize, reps: usize, seed: u64) -> Self {
        Self {
            scenario,
            n,
            reps,
            seed,
            jobs: 0,
            epsilon: DEFAULT_EPSILON,
            ci_level: 0.95,
        }
    }

    pub fn dgp(&self) -> DgpConfig {
        let topology = match &self.scenario.topology {
            Topology::Bipartite { path, .. } => Topology::Bipartite {
                path: path.clone(),
                rows: Some(self.n),
            },
            t => t.clone(),
        };
        DgpConfig {
            topology,
            n: self.n,
            errors: self.scenario.errors,
            effect: EFFECT,
            seed: self.seed,
        }
    }
}

/// One estimator variant applied to one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Outcome {
    pub estimate: f64,
    pub se: f64,
    pub truth: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Outcome {
    pub fn z(&self) -> f64 {
        (self.estimate - self.truth) / self.se
    }

    pub fn covered(&self) -> bool {
        self.lo <= self.truth && self.truth <= self.hi
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub replicate: usize,
    /// One entry per variant; failures carry the error message.
    pub outcomes: Vec<Result<Outcome, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub scenario: String,
    pub variant: String,
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    pub bias: f64,
    pub mse: f64,
    /// Standard deviation of the estimates with the `N − 1` denominator;
    /// reported as 0 when fewer than two replicates succeeded.
    pub ese: f64,
    pub ese_defined: bool,
    pub ase: f64,
    pub coverage: f64,
    /// Monte Carlo standard error of `bias`, `ESE / √N`.
    pub mc_se_bias: f64,
    #[serde(skip)]
    pub estimates: Vec<f64>,
    #[serde(skip)]
    pub z_scores: Vec<f64>,
}

impl ReplicationSummary {
    pub fn from_outcomes(
        scenario: &str,
        variant: &str,
        n: usize,
        outcomes: &[Result<Outcome, String>],
    ) -> Self {
        let ok: Vec<&Outcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        let reps = ok.len();
        let failures = outcomes.len() - reps;
        let nf = reps as f64;
        let (bias, mse, ese, ase, coverage) = if reps == 0 {
            (f64::NAN, f64::NAN, 0.0, f64::NAN, f64::NAN)
        } else {
            let bias = ok.iter().map(|o| o.estimate - o.truth).sum::<f64>() / nf;
            let mse = ok
                .iter()
                .map(|o| (o.estimate - o.truth).powi(2))
                .sum::<f64>()
                / nf;
            let mean = ok.iter().map(|o| o.estimate).sum::<f64>() / nf;
            let ese = if reps > 1 {
                (ok.iter().map(|o| (o.estimate - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
            } else {
                0.0
            };
            let ase = ok.iter().map(|o| o.se).sum::<f64>() / nf;
            let coverage = 100.0 * ok.iter().filter(|o| o.covered()).count() as f64 / nf;
            (bias, mse, ese, ase, coverage)
        };
        Self {
            scenario: scenario.into(),
            variant: variant.into(),
            n,
            reps,
            failures,
            bias,
            mse,
            ese,
            ese_defined: reps > 1,
            ase,
            coverage,
            mc_se_bias: if reps > 0 { ese / nf.sqrt() } else { f64::NAN },
            estimates: ok.iter().map(|o| o.estimate).collect(),
            z_scores: ok.iter().map(|o| o.z()).collect(),
        }
    }

    pub fn table_row(&self) -> String {
        format!(
            "{} [{}] n={} reps={} bias={:.4} mse={:.5} ese={:.4} ase={:.4} coverage={:.1}%",
            self.scenario,
            self.variant,
            self.n,
            self.reps,
            self.bias,
            self.mse,
            self.ese,
            self.ase,
            self.coverage
        )
    }
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub summaries: Vec<ReplicationSummary>,
    pub records: Vec<ReplicateRecord>,
}

fn learner_predictions(
    learner: Learner,
    x: &[Vec<f64>],
    y: &[f64],
    clamp: bool,
) -> Result<Vec<f64>, String> {
    let fit = learner.fit(x, y).map_err(|e| e.to_string())?;
    let p = fit.predict_all(x);
    Ok(if clamp {
        p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
    } else {
        p
    })
}

type Propensities = (Vec<f64>, Vec<f64>);

fn propensities(data: &SimDataset, mode: PiMode) -> Result<Propensities, String> {
    let n = data.delta_y.len();
    let as_f64 = |v: &[bool]| v.iter().map(|&b| b as u8 as f64).collect::<Vec<_>>();
    let learned = |learner: Learner| -> Result<Propensities, String> {
        Ok((
            learner_predictions(
                learner.clone(),
                &data.covariates,
                &as_f64(&data.exposed),
                true,
            )?,
            learner_predictions(learner, &data.covariates, &as_f64(&data.reference), true)?,
        ))
    };
    match mode {
        PiMode::Oracle => Ok((
            data.truth.pi_target.clone(),
            data.truth.pi_reference.clone(),
        )),
        PiMode::Half => Ok((vec![0.5; n], vec![0.5; n])),
        PiMode::Logistic => learned(Learner::logistic()),
        PiMode::Kernel => learned(Learner::kernel()),
    }
}

fn outcome_regression(data: &SimDataset, mode: MuMode) -> Result<Vec<f64>, String> {
    let n = data.delta_y.len();
    let learned = |learner: Learner| -> Result<Vec<f64>, String> {
        let idx: Vec<usize> = (0..n).filter(|&i| data.reference[i]).collect();
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| data.covariates[i].clone()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| data.delta_y[i]).collect();
        let fit = learner.fit(&x, &y).map_err(|e| e.to_string())?;
        Ok(fit.predict_all(&data.covariates))
    };
    match mode {
        MuMode::Oracle => Ok(data.truth.mu.clone()),
        MuMode::Zero => Ok(vec![0.0; n]),
        MuMode::Linear => learned(Learner::Linear),
        MuMode::Kernel => learned(Learner::kernel()),
    }
}

fn run_variant(
    design: &dyn Design,
    data: &SimDataset,
    pi: &Propensities,
    mu: &[f64],
    variant: &Variant,
    config: &StudyConfig,
) -> Result<Outcome, String> {
    let n = data.delta_y.len();
    let p_emp = empirical_exposure_prob(&data.exposed).map_err(|e| e.to_string())?;
    let (p1, source) = match variant.p1 {
        P1Mode::Empirical => (vec![p_emp; n], P1Source::Empirical),
        P1Mode::Oracle => (data.truth.p1.clone(), P1Source::Oracle),
        P1Mode::NetworkModel => {
            let features = data
                .features
                .as_ref()
                .ok_or("design has no network features for a parametric exposure model")?;
            let fit =
                fit_network_exposure_prob(features, &data.exposed).map_err(|e| e.to_string())?;
            (fit.probabilities.clone(), P1Source::NetworkModel(fit))
        }
    };
    let bundle = NuisanceBundle::new(
        pi.0.clone(),
        pi.1.clone(),
        mu.to_vec(),
        p1,
        source,
        config.epsilon,
    )
    .map_err(|e| e.to_string())?;
    let sample = EstimationSample::new(
        data.delta_y.clone(),
        data.exposed.clone(),
        data.reference.clone(),
    );
    let est_config = EstimatorConfig {
        bandwidth: variant.bandwidth,
        kernel: Kernel::Uniform,
        ci_level: config.ci_level,
        ..EstimatorConfig::default()
    };
    let result =
        estimate(&sample, &bundle, design.distances(), &est_config).map_err(|e| e.to_string())?;
    let truth = data.truth.aee;
    let (tau, variance) = match variant.correction {
        Correction::None => (result.tau, result.variance),
        Correction::VarOnly | Correction::BiasVar => {
            let c = oracle_corrections(
                Some(&data.truth.aee_i),
                Some(&data.truth.p1),
                p_emp,
                design.distances(),
                Kernel::Uniform,
                variant.bandwidth,
            )
            .map_err(|e| e.to_string())?;
            let tau = if variant.correction == Correction::BiasVar {
                result.tau - c.s1
            } else {
                result.tau
            };
            (tau, (result.variance - c.v_n).max(0.0))
        }
    };
    let (lo, hi) = wald_ci(tau, variance, n, config.ci_level).map_err(|e| e.to_string())?;
    Ok(Outcome {
        estimate: tau,
        se: (variance / n as f64).sqrt(),
        truth,
        lo,
        hi,
    })
}

fn run_replicate(design: &dyn Design, config: &StudyConfig, r: usize) -> ReplicateRecord {
    let variants = &config.scenario.variants;
    let fail_all = |msg: String| ReplicateRecord {
        replicate: r,
        outcomes: vec![Err(msg); variants.len()],
    };
    let data = match design.generate(seed::mix(config.seed, r as u64)) {
        Ok(d) => d,
        Err(e) => return fail_all(e.to_string()),
    };
    let pi = match propensities(&data, config.scenario.pi) {
        Ok(p) => p,
        Err(e) => return fail_all(e),
    };
    let mu = match outcome_regression(&data, config.scenario.mu) {
        Ok(m) => m,
        Err(e) => return fail_all(e),
    };
    ReplicateRecord {
        replicate: r,
        outcomes: variants
            .iter()
            .map(|v| run_variant(design, &data, &pi, &mu, v, config))
            .collect(),
    }
}

/// Runs `reps` replicates on a pool of `jobs` threads. Replicate `r` uses
/// the seed `mix(seed, r)`, and records are collected in replicate order,
/// so results do not depend on the thread count. Estimation failures are
/// counted per variant.
pub fn run_replications(config: &StudyConfig) -> Result<StudyResult, SimError> {
    if config.reps == 0 {
        return Err(SimError::InvalidConfig("reps must be at least 1".into()));
    }
    let design = build_design(&config.dgp())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))?;
    let records: Vec<ReplicateRecord> = pool.install(|| {
        (0..config.reps)
            .into_par_iter()
            .map(|r| run_replicate(design.as_ref(), config, r))
            .collect()
    });
    let n = design.unit_count();
    let summaries = config
        .scenario
        .variants
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let outcomes: Vec<Result<Outcome, String>> =
                records.iter().map(|rec| rec.outcomes[k].clone()).collect();
            ReplicationSummary::from_outcomes(&config.scenario.name, &v.label, n, &outcomes)
        })
        .collect();
    Ok(StudyResult { summaries, records })
}

pub const SUMMARY_HEADER: [&str; 12] = [
    "scenario",
    "variant",
    "n",
    "reps",
    "failures",
    "bias",
    "mse",
    "ese",
    "ase",
    "coverage",
    "mc_se_bias",
    "ese_defined",
];

pub fn summary_row(s: &ReplicationSummary) -> Vec<String> {
    vec![
        s.scenario.clone(),
        s.variant.clone(),
        s.n.to_string(),
        s.reps.to_string(),
        s.failures.to_string(),
        s.bias.to_string(),
        s.mse.to_string(),
        s.ese.to_string(),
        s.ase.to_string(),
        s.coverage.to_string(),
        s.mc_se_bias.to_string(),
        s.ese_defined.to_string(),
    ]
}

fn csv_error(e: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

pub fn write_summary(path: &Path, summaries: &[ReplicationSummary]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(SUMMARY_HEADER).map_err(csv_error)?;
    for s in summaries {
        w.write_record(summary_row(s)).map_err(csv_error)?;
    }
    w.flush()
}

pub fn write_zscores(path: &Path, study: &StudyResult) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["scenario", "variant", "replicate", "estimate", "se", "z"])
        .map_err(csv_error)?;
    for (k, s) in study.summaries.iter().enumerate() {
        for rec in &study.records {
            if let Ok(o) = &rec.outcomes[k] {
                w.write_record([
                    s.scenario.clone(),
                    s.variant.clone(),
                    rec.replicate.to_string(),
                    o.estimate.to_string(),
                    o.se.to_string(),
                    o.z().to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
    }
    w.flush()
}

/// QQ pairs for every variant with at least the minimum number of finite
/// z-scores; other variants are skipped.
pub fn write_qq(path: &Path, summaries: &[ReplicationSummary]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["scenario", "variant", "theoretical", "empirical"])
        .map_err(csv_error)?;
    for s in summaries {
        let z: Vec<f64> = s
            .z_scores
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        if z.len() < MIN_QQ_POINTS {
            continue;
        }
        for (t, e) in qq_data(&z).map_err(csv_error)? {
            w.write_record([
                s.scenario.clone(),
                s.variant.clone(),
                t.to_string(),
                e.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()
}

/// Writes `summary.csv`, `zscores.csv` and `qq.csv` into `dir`.
pub fn write_study(dir: &Path, study: &StudyResult) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_summary(&dir.join("summary.csv"), &study.summaries)?;
    write_zscores(&dir.join("zscores.csv"), study)?;
    write_qq(&dir.join("qq.csv"), &study.summaries)?;
    let mut f = std::fs::File::create(dir.join("summary.txt"))?;
    for s in &study.summaries {
        writeln!(f, "{}", s.table_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::scenario;

    fn outcome(estimate: f64, se: f64) -> Result<Outcome, String> {
        Ok(Outcome {
            estimate,
            se,
            truth: 1.0,
            lo: estimate - 1.96 * se,
            hi: estimate + 1.96 * se,
        })
    }

    #[test]
    fn summary_identities() {
        let outs = vec![
            outcome(1.2, 0.1),
            outcome(0.9, 0.2),
            outcome(1.05, 0.1),
            Err("boom".into()),
        ];
        let s = ReplicationSummary::from_outcomes("x", "v", 10, &outs);
        assert_eq!(s.reps, 3);
        assert_eq!(s.failures, 1);
        let n = 3.0;
        let identity = s.bias.powi(2) + s.ese.powi(2) * (n - 1.0) / n;
        assert!((s.mse - identity).abs() < 1e-12);
        assert!(s.mse >= s.bias.powi(2));
        assert!((s.mc_se_bias - s.ese / n.sqrt()).abs() < 1e-15);
        assert!((0.0..=100.0).contains(&s.coverage));
    }

    #[test]
    fn single_replicate_flags_ese() {
        let s = ReplicationSummary::from_outcomes("x", "v", 10, &[outcome(1.5, 0.1)]);
        assert_eq!(s.bias, 0.5);
        assert_eq!(s.ese, 0.0);
        assert!(!s.ese_defined);
    }

    #[test]
    fn small_ring_study_is_deterministic_across_jobs() {
        let sc = scenario("ring-dep-oracle", None).unwrap();
        let mut cfg = StudyConfig::new(sc, 60, 6, 7);
        cfg.jobs = 1;
        let a = run_replications(&cfg).unwrap();
        cfg.jobs = 3;
        let b = run_replications(&cfg).unwrap();
        assert_eq!(a.summaries, b.summaries);
        assert_eq!(a.summaries.len(), 2);
        assert_eq!(a.summaries[0].failures, 0);
    }
}
