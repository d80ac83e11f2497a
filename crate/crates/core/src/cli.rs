//! Command-line entry point: `estimate`, `simulate` and `report`.
//!
//! Failures are printed to stderr as a single JSON object
//! `{"error": {"code": ..., "message": ...}}`. Validation failures exit
//! with status 2, estimation failures with status 1.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{ConfigError, DistanceMetric, MuChoice, P1Choice, PiChoice, RunConfig};
use crate::estimator::{estimate, EstimationSample, EstimatorConfig, EstimatorError};
use crate::exposure::{classify_staggered_cohort, exposure_history, Cohort};
use crate::graph::{
    project_bipartite, DistanceOracle, DistanceSource, InterferenceMatrix, Isolated,
    SubsetDistances,
};
use crate::io::{self, IoError};
use crate::nuisance::{
    empirical_exposure_prob, exposure_propensities, fit_network_exposure_prob, Learner,
    NuisanceBundle, NuisanceError, P1Source, PeriodPropensities, PropensityMethod,
};
use crate::simulation::study::{write_study, SUMMARY_HEADER};
use crate::simulation::{
    fixture, run_replications, scenario, scenario_names, SimError, StudyConfig, Topology, REPS,
    REPS_FULL, RING_N, RING_N_FULL,
};

pub const DEFAULT_SEED: u64 = 20240601;

#[derive(Debug, Parser)]
#[command(
    name = "netdid",
    version,
    about = "Doubly robust DiD under network interference"
)]
pub struct Cli {
    /// Key-value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads for simulations (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the average exposure effect from panel files.
    Estimate(EstimateArgs),
    /// Run a replication study on a synthetic design.
    Simulate(SimulateArgs),
    /// Merge study summaries into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Outcomes, `unit,time,y`.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Outcome-unit covariates, `unit,x1..xk`.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Treatments, `unit_j,time,z`.
    #[arg(long)]
    pub treatments: Option<PathBuf>,
    /// Interference weights, `row,col,weight[,time]`.
    #[arg(long)]
    pub interference: Option<PathBuf>,
    /// Outcome-unit network, `i,k`.
    #[arg(long)]
    pub network: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Outcome units (ring) or matrix rows kept (bipartite).
    #[arg(long)]
    pub n: Option<usize>,
    /// Use the large sample size and replicate count.
    #[arg(long)]
    pub full_scale: bool,
    /// Interference matrix for the bipartite scenarios.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Print the scenario names and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `summary.csv` files to merge.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ErrorCode {
    #[serde(rename = "E_INPUT")]
    Input,
    #[serde(rename = "E_CONFIG")]
    Config,
    #[serde(rename = "E_SCHEMA")]
    Schema,
    #[serde(rename = "E_SCENARIO")]
    Scenario,
    #[serde(rename = "E_ESTIMATION")]
    Estimation,
    #[serde(rename = "E_DEGENERATE_EXPOSURE")]
    DegenerateExposure,
}

impl ErrorCode {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCode::Estimation | ErrorCode::DegenerateExposure => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub code: ErrorCode,
    pub message: String,
}

impl CliError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let code = match e {
            IoError::Schema { .. } => ErrorCode::Schema,
            _ => ErrorCode::Input,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Read { .. } => ErrorCode::Input,
            _ => ErrorCode::Config,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<NuisanceError> for CliError {
    fn from(e: NuisanceError) -> Self {
        let code = match e {
            NuisanceError::DegenerateExposure { .. } => ErrorCode::DegenerateExposure,
            NuisanceError::InvalidEpsilon(_) | NuisanceError::InvalidDraws => ErrorCode::Config,
            _ => ErrorCode::Estimation,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        let code = match e {
            EstimatorError::NoExposedUnits
            | EstimatorError::NoReferenceUnits
            | EstimatorError::DegenerateP2(_) => ErrorCode::DegenerateExposure,
            EstimatorError::NetworkModelRequired
            | EstimatorError::InvalidLevel(_)
            | EstimatorError::InvalidBandwidth(_) => ErrorCode::Config,
            EstimatorError::Nuisance(inner) => return inner.into(),
            _ => ErrorCode::Estimation,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::UnknownScenario(_) => ErrorCode::Scenario,
            SimError::MissingMatrixFile(_) => ErrorCode::Input,
            SimError::InvalidConfig(_) | SimError::Pool(_) => ErrorCode::Config,
            _ => ErrorCode::Estimation,
        };
        CliError::new(code, e.to_string())
    }
}

fn write_error(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::new(ErrorCode::Input, format!("writing {}: {e}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    std::fs::write(path, text + "\n").map_err(write_error(path))
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    match &cli.config {
        Some(p) => Ok(RunConfig::read(p)?),
        None => Ok(RunConfig::default()),
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Estimate(args) => cmd_estimate(cli, args, config),
        Command::Simulate(args) => cmd_simulate(cli, args, config),
        Command::Report(args) => cmd_report(&cli.out, &args.inputs),
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let err = CliError::new(ErrorCode::Config, e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.code.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code.exit_code()
        }
    }
}

fn required(
    flag: Option<&PathBuf>,
    config: Option<&PathBuf>,
    name: &str,
) -> Result<PathBuf, CliError> {
    flag.or(config).cloned().ok_or_else(|| {
        CliError::new(
            ErrorCode::Config,
            format!("missing input: pass --{name} or set input.{name}"),
        )
    })
}

fn cohort_label(c: Option<Cohort>) -> String {
    match c {
        Some(Cohort::Adopted(k)) => format!("adopted_{k}"),
        Some(Cohort::AlwaysZero) => "always_zero".into(),
        Some(Cohort::NotStaggered) => "not_staggered".into(),
        None => "undefined".into(),
    }
}

pub fn cmd_estimate(cli: &Cli, args: &EstimateArgs, mut config: RunConfig) -> Result<(), CliError> {
    let inputs = &mut config.inputs;
    let panel_path = required(args.panel.as_ref(), inputs.panel.as_ref(), "panel")?;
    let treat_path = required(
        args.treatments.as_ref(),
        inputs.treatments.as_ref(),
        "treatments",
    )?;
    let w_path = required(
        args.interference.as_ref(),
        inputs.interference.as_ref(),
        "interference",
    )?;
    let cov_path = args.covariates.clone().or(inputs.covariates.clone());
    let net_path = args.network.clone().or(inputs.network.clone());

    // every file is read and validated before any fitting
    let panel = io::read_panel(&panel_path)?;
    let treatments = io::read_treatments(&treat_path)?;
    let (n, periods) = (panel.unit_count(), panel.periods());
    let m = treatments.first().map_or(0, Vec::len);
    if treatments.len() != periods {
        return Err(CliError::new(
            ErrorCode::Input,
            format!(
                "panel has {periods} periods but treatments have {}",
                treatments.len()
            ),
        ));
    }
    let weights = io::read_interference_panel(&w_path, Some((n, m)))
        .map_err(|e| CliError::new(ErrorCode::Input, e.to_string()))?;
    if weights.len() != 1 && weights.len() != periods {
        return Err(CliError::new(
            ErrorCode::Input,
            format!(
                "interference covers {} periods, panel {periods}",
                weights.len()
            ),
        ));
    }
    let covariates = match &cov_path {
        Some(p) => {
            let x = io::read_covariates(p)?;
            if x.len() != n {
                return Err(CliError::new(
                    ErrorCode::Input,
                    format!("{} covariate rows for {n} panel units", x.len()),
                ));
            }
            x
        }
        None => vec![Vec::new(); n],
    };
    let network = match &net_path {
        Some(p) => Some(io::read_network(p, n)?),
        None => None,
    };

    let spec = config.exposure.spec(periods)?;
    let time = spec.time;
    let spec_weights: &[InterferenceMatrix] = if weights.len() == 1 {
        &weights
    } else {
        &weights[..=time]
    };
    let exposures = exposure_history(&treatments[..=time], spec_weights, &spec.mapping)
        .map_err(|e| CliError::new(ErrorCode::Input, e.to_string()))?;

    let kept: Vec<usize> = (0..n).filter(|&i| exposures.history(i).is_some()).collect();
    let exposed: Vec<bool> = kept
        .iter()
        .map(|&i| exposures.match_history(i, &spec.target))
        .collect();
    let reference: Vec<bool> = kept
        .iter()
        .map(|&i| exposures.match_history(i, &spec.reference))
        .collect();
    let n_exposed = exposed.iter().filter(|&&b| b).count();
    let n_reference = reference.iter().filter(|&&b| b).count();
    if n_exposed == 0 || n_reference == 0 || n_exposed == kept.len() {
        return Err(CliError::new(
            ErrorCode::DegenerateExposure,
            format!(
                "{n_exposed} of {} units match the target history and {n_reference} the reference history",
                kept.len()
            ),
        ));
    }
    let delta_y: Vec<f64> = kept
        .iter()
        .map(|&i| panel.y[i][time] - panel.y[i][time - spec.lag])
        .collect();
    let x: Vec<Vec<f64>> = kept.iter().map(|&i| covariates[i].clone()).collect();
    let indicator = |v: &[bool]| v.iter().map(|&b| b as u8 as f64).collect::<Vec<_>>();

    let mut audits = serde_json::Map::new();
    let (pi_target, pi_reference) = match config.nuisance.pi {
        PiChoice::Constant(p) => (vec![p; kept.len()], vec![p; kept.len()]),
        PiChoice::Logistic | PiChoice::Kernel => {
            let learner = if config.nuisance.pi == PiChoice::Logistic {
                Learner::logistic()
            } else {
                Learner::kernel()
            };
            let ft = learner.fit(&x, &indicator(&exposed))?;
            let fr = learner.fit(&x, &indicator(&reference))?;
            audits.insert("pi_target".into(), ft.audit());
            audits.insert("pi_reference".into(), fr.audit());
            let clamp = |v: Vec<f64>| v.into_iter().map(|p| p.clamp(0.0, 1.0)).collect::<Vec<_>>();
            (clamp(ft.predict_all(&x)), clamp(fr.predict_all(&x)))
        }
        PiChoice::Bridge => {
            let shares: Vec<Vec<f64>> = treatments[..=time]
                .iter()
                .map(|z| {
                    let share = z.iter().filter(|&&b| b).count() as f64 / m.max(1) as f64;
                    vec![share; m]
                })
                .collect();
            audits.insert(
                "treatment_propensity".into(),
                serde_json::json!({"kind": "period_share", "values": shares.iter().map(|s| s.first().copied().unwrap_or(0.0)).collect::<Vec<_>>()}),
            );
            let prop = PeriodPropensities(shares);
            let method = PropensityMethod::Auto {
                draws: config.nuisance.draws,
                seed: cli.seed,
            };
            let eval = |h: &[u8]| -> Result<Vec<f64>, CliError> {
                let all = exposure_propensities(&prop, spec_weights, &spec.mapping, h, method)?;
                Ok(kept
                    .iter()
                    .map(|&i| all[i].expect("kept units have interference sets"))
                    .collect())
            };
            (eval(&spec.target)?, eval(&spec.reference)?)
        }
    };

    let mu = match config.nuisance.mu {
        MuChoice::Constant(v) => vec![v; kept.len()],
        choice => {
            let learner = if choice == MuChoice::Linear {
                Learner::Linear
            } else {
                Learner::kernel()
            };
            let idx: Vec<usize> = (0..kept.len()).filter(|&k| reference[k]).collect();
            let xr: Vec<Vec<f64>> = idx.iter().map(|&k| x[k].clone()).collect();
            let yr: Vec<f64> = idx.iter().map(|&k| delta_y[k]).collect();
            let fit = learner.fit(&xr, &yr)?;
            audits.insert("mu".into(), fit.audit());
            fit.predict_all(&x)
        }
    };

    let (p1, p1_source) = match config.nuisance.p1 {
        P1Choice::Empirical => {
            let p = empirical_exposure_prob(&exposed)?;
            (vec![p; kept.len()], P1Source::Empirical)
        }
        P1Choice::Network => {
            let d = x.first().map_or(0, Vec::len);
            let features =
                DMatrix::from_fn(
                    kept.len(),
                    d + 1,
                    |i, k| if k == 0 { 1.0 } else { x[i][k - 1] },
                );
            let fit = fit_network_exposure_prob(&features, &exposed)?;
            audits.insert(
                "p1".into(),
                serde_json::to_value(&fit).expect("serializable"),
            );
            (fit.probabilities.clone(), P1Source::NetworkModel(fit))
        }
    };
    let bundle = NuisanceBundle::new(
        pi_target,
        pi_reference,
        mu,
        p1,
        p1_source,
        config.estimator.epsilon,
    )?;
    if bundle.positivity.clipped_evaluations > 0 {
        log::warn!(
            "{} propensity evaluations clipped into [{}, {}]",
            bundle.positivity.clipped_evaluations,
            bundle.epsilon,
            1.0 - bundle.epsilon
        );
    }
    let mut sample = EstimationSample::new(delta_y, exposed, reference);
    sample.unit_ids = kept.clone();

    let est_config = EstimatorConfig {
        bandwidth: config.estimator.bandwidth,
        kernel: config.estimator.kernel,
        ci_level: config.estimator.ci_level,
        heterogeneity: config.estimator.heterogeneity,
    };
    let metric = config.estimator.distance.unwrap_or(if network.is_some() {
        DistanceMetric::Hop
    } else {
        DistanceMetric::Weighted
    });
    let result = if est_config.bandwidth == 0.0 {
        estimate(&sample, &bundle, &Isolated(kept.len()), &est_config)?
    } else {
        let oracle;
        let projection;
        let full: &dyn DistanceSource = match metric {
            DistanceMetric::Hop => {
                let net = network.as_ref().ok_or_else(|| {
                    CliError::new(ErrorCode::Config, "hop distances need --network")
                })?;
                oracle = DistanceOracle::new(net);
                &oracle
            }
            DistanceMetric::Weighted => {
                let w = if weights.len() == 1 {
                    &weights[0]
                } else {
                    &weights[time]
                };
                projection = project_bipartite(w);
                &projection
            }
        };
        let subset = SubsetDistances::new(full, kept.clone())
            .map_err(|e| CliError::new(ErrorCode::Input, e.to_string()))?;
        estimate(&sample, &bundle, &subset, &est_config)?
    };

    let out = &cli.out;
    std::fs::create_dir_all(out).map_err(write_error(out))?;
    let mut aee = serde_json::to_value(&result).expect("serializable");
    if let serde_json::Value::Object(map) = &mut aee {
        map.insert("point".into(), result.tau.into());
        map.insert("time".into(), time.into());
        map.insert("lag".into(), spec.lag.into());
        map.insert("target".into(), serde_json::json!(spec.target));
        map.insert("reference".into(), serde_json::json!(spec.reference));
    }
    write_json(&out.join("aee.json"), &aee)?;
    io::write_influence(&out.join("influence.csv"), &result.contributions)?;
    io::write_exposures(&out.join("exposures.csv"), &exposures)?;

    let mut cohorts: BTreeMap<String, usize> = BTreeMap::new();
    for i in 0..n {
        let c = exposures.history(i).map(classify_staggered_cohort);
        *cohorts.entry(cohort_label(c)).or_default() += 1;
    }
    let diagnostics = serde_json::json!({
        "units": n,
        "estimation_units": kept.len(),
        "undefined_exposure_units": exposures.flagged(),
        "exposed": sample.exposed.iter().filter(|&&b| b).count(),
        "reference": sample.reference.iter().filter(|&&b| b).count(),
        "p2": result.p2,
        "positivity": bundle.positivity,
        "cohorts": cohorts,
        "hac": result.hac,
        "distance": if est_config.bandwidth == 0.0 { None } else { Some(metric) },
        "nuisance": {
            "pi": config.nuisance.pi,
            "mu": config.nuisance.mu,
            "p1": config.nuisance.p1,
            "fits": audits,
        },
        "seed": cli.seed,
    });
    write_json(&out.join("diagnostics.json"), &diagnostics)?;
    println!(
        "tau = {} (se {}, {}% CI [{}, {}]) on {} units",
        result.tau,
        result.se,
        100.0 * result.ci.level,
        result.ci.lo,
        result.ci.hi,
        result.n
    );
    Ok(())
}

pub fn cmd_simulate(cli: &Cli, args: &SimulateArgs, config: RunConfig) -> Result<(), CliError> {
    if args.list {
        for name in scenario_names() {
            println!("{name}");
        }
        return Ok(());
    }
    let sim = &config.simulation;
    let name = args
        .scenario
        .clone()
        .or(sim.scenario.clone())
        .ok_or_else(|| {
            CliError::new(
                ErrorCode::Config,
                "pass --scenario or set simulation.scenario",
            )
        })?;
    let full = args.full_scale || sim.full_scale;
    let matrix = args.matrix.clone().or(sim.matrix.clone());
    let sc = scenario(&name, matrix)?;
    let default_n = match (&sc.topology, full) {
        (Topology::Bipartite { .. }, false) => fixture::DEFAULT_ROWS,
        (Topology::Bipartite { .. }, true) => fixture::FIXTURE_ROWS,
        (_, false) => RING_N,
        (_, true) => RING_N_FULL,
    };
    let n = args.n.or(sim.n).unwrap_or(default_n);
    let reps = args
        .reps
        .or(sim.reps)
        .unwrap_or(if full { REPS_FULL } else { REPS });
    if reps == 0 {
        return Err(CliError::new(ErrorCode::Config, "--reps must be positive"));
    }
    let mut study = StudyConfig::new(sc, n, reps, cli.seed);
    study.jobs = cli.jobs;
    study.epsilon = config.estimator.epsilon;
    study.ci_level = config.estimator.ci_level;
    let result = run_replications(&study)?;
    write_study(&cli.out, &result).map_err(write_error(&cli.out))?;
    for s in &result.summaries {
        println!("{}", s.table_row());
    }
    Ok(())
}

fn format_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(header) + "\n";
    for r in rows {
        out += &line(r);
        out.push('\n');
    }
    out
}

pub fn cmd_report(out: &Path, inputs: &[PathBuf]) -> Result<(), CliError> {
    let expected: Vec<String> = SUMMARY_HEADER.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for path in inputs {
        let (header, body) = io::read_raw(path)?;
        if header != expected {
            return Err(CliError::new(
                ErrorCode::Schema,
                format!(
                    "{}: columns {:?} differ from the summary schema {:?}",
                    path.display(),
                    header,
                    expected
                ),
            ));
        }
        rows.extend(body);
    }
    std::fs::create_dir_all(out).map_err(write_error(out))?;
    io::write_raw(&out.join("report.csv"), &expected, &rows)?;
    let table = format_table(&expected, &rows);
    let txt = out.join("report.txt");
    std::fs::write(&txt, &table).map_err(write_error(&txt))?;
    print!("{table}");
    Ok(())
}
