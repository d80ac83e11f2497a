//! Plain-text `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are dotted
//! (`estimator.bandwidth`); unknown keys are rejected so that typos do not
//! silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::estimator::{Heterogeneity, Kernel};
use crate::exposure::{Exposure, ExposureMapping, ExposureSpec};
use crate::nuisance::{DEFAULT_DRAWS, DEFAULT_EPSILON};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("line {line}: key '{key}' given twice")]
    Duplicate { line: usize, key: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("{key}: invalid value '{value}' ({reason})")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
}

/// Raw key-value pairs in file order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: idx + 1 })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: idx + 1 });
            }
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate { line: idx + 1, key });
            }
        }
        Ok(Self(map))
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PiChoice {
    Logistic,
    Kernel,
    /// Treatment-level propensities mapped through the exposure bridge.
    Bridge,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum MuChoice {
    Linear,
    Kernel,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum P1Choice {
    Empirical,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Hop distance on the outcome network.
    Hop,
    /// Shortest paths on the weighted bipartite projection.
    Weighted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Inputs {
    pub panel: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub treatments: Option<PathBuf>,
    pub interference: Option<PathBuf>,
    pub network: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExposureSettings {
    pub threshold: f64,
    pub inclusive: bool,
    pub target: Vec<Exposure>,
    pub reference: Vec<Exposure>,
    /// Defaults to the last panel period.
    pub time: Option<usize>,
    pub lag: usize,
}

impl Default for ExposureSettings {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            inclusive: false,
            target: vec![0, 1],
            reference: vec![0, 0],
            time: None,
            lag: 1,
        }
    }
}

impl ExposureSettings {
    pub fn mapping(&self) -> ExposureMapping {
        if self.inclusive {
            ExposureMapping::threshold_inclusive(self.threshold)
        } else {
            ExposureMapping::threshold(self.threshold)
        }
    }

    pub fn spec(&self, periods: usize) -> Result<ExposureSpec, ConfigError> {
        let time = self.time.unwrap_or(periods.saturating_sub(1));
        if time >= periods {
            return Err(ConfigError::Value {
                key: "exposure.time".into(),
                value: time.to_string(),
                reason: format!("panel has {periods} periods"),
            });
        }
        ExposureSpec::new(
            self.mapping(),
            self.target.clone(),
            self.reference.clone(),
            time,
            self.lag,
        )
        .map_err(|e| ConfigError::Value {
            key: "exposure".into(),
            value: format!("target {:?}, reference {:?}", self.target, self.reference),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuisanceSettings {
    pub pi: PiChoice,
    pub mu: MuChoice,
    pub p1: P1Choice,
    /// Monte Carlo draws of the exposure bridge.
    pub draws: usize,
}

impl Default for NuisanceSettings {
    fn default() -> Self {
        Self {
            pi: PiChoice::Logistic,
            mu: MuChoice::Linear,
            p1: P1Choice::Empirical,
            draws: DEFAULT_DRAWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSettings {
    pub bandwidth: f64,
    pub kernel: Kernel,
    pub epsilon: f64,
    pub ci_level: f64,
    /// Defaults to hop distance when a network is given, weighted otherwise.
    pub distance: Option<DistanceMetric>,
    pub heterogeneity: Heterogeneity,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            bandwidth: 0.0,
            kernel: Kernel::Uniform,
            epsilon: DEFAULT_EPSILON,
            ci_level: 0.95,
            distance: None,
            heterogeneity: Heterogeneity::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimulationSettings {
    pub scenario: Option<String>,
    pub reps: Option<usize>,
    pub n: Option<usize>,
    pub full_scale: bool,
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub inputs: Inputs,
    pub exposure: ExposureSettings,
    pub nuisance: NuisanceSettings,
    pub estimator: EstimatorSettings,
    pub simulation: SimulationSettings,
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| bad(key, value, e.to_string()))
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn history(key: &str, value: &str) -> Result<Vec<Exposure>, ConfigError> {
    value
        .split(',')
        .map(|s| match s.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => Err(bad(key, value, "expected a comma-separated 0/1 list")),
        })
        .collect()
}

fn constant(key: &str, value: &str) -> Result<Option<f64>, ConfigError> {
    match value.strip_prefix("constant:") {
        Some(v) => number(key, v).map(Some),
        None => Ok(None),
    }
}

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (key, value) in &kv.0 {
            let (k, v) = (key.as_str(), value.as_str());
            match k {
                "input.panel" => c.inputs.panel = Some(v.into()),
                "input.covariates" => c.inputs.covariates = Some(v.into()),
                "input.treatments" => c.inputs.treatments = Some(v.into()),
                "input.interference" => c.inputs.interference = Some(v.into()),
                "input.network" => c.inputs.network = Some(v.into()),
                "exposure.threshold" => c.exposure.threshold = number(k, v)?,
                "exposure.comparison" => {
                    c.exposure.inclusive = match v {
                        "strict" | ">" => false,
                        "inclusive" | ">=" => true,
                        _ => return Err(bad(k, v, "expected strict or inclusive")),
                    }
                }
                "exposure.target" => c.exposure.target = history(k, v)?,
                "exposure.reference" => c.exposure.reference = history(k, v)?,
                "exposure.time" => c.exposure.time = Some(number(k, v)?),
                "exposure.lag" => c.exposure.lag = number(k, v)?,
                "nuisance.pi" => {
                    c.nuisance.pi = match (v, constant(k, v)?) {
                        (_, Some(p)) if (0.0..=1.0).contains(&p) => PiChoice::Constant(p),
                        (_, Some(_)) => return Err(bad(k, v, "constant must lie in [0, 1]")),
                        ("logistic", _) => PiChoice::Logistic,
                        ("kernel", _) => PiChoice::Kernel,
                        ("bridge", _) => PiChoice::Bridge,
                        _ => {
                            return Err(bad(
                                k,
                                v,
                                "expected logistic, kernel, bridge or constant:<p>",
                            ))
                        }
                    }
                }
                "nuisance.mu" => {
                    c.nuisance.mu = match (v, constant(k, v)?) {
                        (_, Some(m)) => MuChoice::Constant(m),
                        ("linear", _) => MuChoice::Linear,
                        ("kernel", _) => MuChoice::Kernel,
                        ("zero", _) => MuChoice::Constant(0.0),
                        _ => {
                            return Err(bad(k, v, "expected linear, kernel, zero or constant:<v>"))
                        }
                    }
                }
                "nuisance.p1" => {
                    c.nuisance.p1 = match v {
                        "empirical" => P1Choice::Empirical,
                        "network" => P1Choice::Network,
                        _ => return Err(bad(k, v, "expected empirical or network")),
                    }
                }
                "nuisance.draws" => c.nuisance.draws = number(k, v)?,
                "estimator.bandwidth" => c.estimator.bandwidth = number(k, v)?,
                "estimator.kernel" => {
                    c.estimator.kernel = match v {
                        "uniform" => Kernel::Uniform,
                        _ => return Err(bad(k, v, "only the uniform kernel is available")),
                    }
                }
                "estimator.epsilon" => c.estimator.epsilon = number(k, v)?,
                "estimator.ci_level" => c.estimator.ci_level = number(k, v)?,
                "estimator.distance" => {
                    c.estimator.distance = Some(match v {
                        "hop" => DistanceMetric::Hop,
                        "weighted" => DistanceMetric::Weighted,
                        _ => return Err(bad(k, v, "expected hop or weighted")),
                    })
                }
                "estimator.heterogeneity" => {
                    let (effect, probability) = match v {
                        "none" => (false, false),
                        "effect" => (true, false),
                        "probability" => (false, true),
                        "both" => (true, true),
                        _ => return Err(bad(k, v, "expected none, effect, probability or both")),
                    };
                    c.estimator.heterogeneity = Heterogeneity {
                        effect,
                        probability,
                    };
                }
                "simulation.scenario" => c.simulation.scenario = Some(v.into()),
                "simulation.reps" => c.simulation.reps = Some(number(k, v)?),
                "simulation.n" => c.simulation.n = Some(number(k, v)?),
                "simulation.full_scale" => c.simulation.full_scale = boolean(k, v)?,
                "simulation.matrix" => c.simulation.matrix = Some(v.into()),
                _ => return Err(ConfigError::UnknownKey(key.clone())),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        Self::from_key_values(&KeyValues::read(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.estimator;
        if !(e.bandwidth.is_finite() && e.bandwidth >= 0.0) {
            return Err(bad(
                "estimator.bandwidth",
                &e.bandwidth.to_string(),
                "must be >= 0",
            ));
        }
        if !(e.ci_level > 0.0 && e.ci_level < 1.0) {
            return Err(bad(
                "estimator.ci_level",
                &e.ci_level.to_string(),
                "must lie in (0, 1)",
            ));
        }
        if !(e.epsilon >= 0.0 && e.epsilon < 0.5) {
            return Err(bad(
                "estimator.epsilon",
                &e.epsilon.to_string(),
                "must lie in [0, 0.5)",
            ));
        }
        if self.exposure.lag < 1 {
            return Err(bad("exposure.lag", "0", "must be at least 1"));
        }
        if self.nuisance.draws == 0 {
            return Err(bad("nuisance.draws", "0", "must be positive"));
        }
        if self.simulation.reps == Some(0) {
            return Err(bad("simulation.reps", "0", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys() {
        let text = "# comment\n\
                    estimator.bandwidth = 2.5\n\
                    nuisance.pi = constant:0.5\n\
                    nuisance.mu = zero\n\
                    exposure.comparison = inclusive\n\
                    exposure.target = 0, 0, 1\n\
                    exposure.reference = 0,0,0\n\
                    estimator.heterogeneity = both\n";
        let c = RunConfig::from_key_values(&KeyValues::parse(text).unwrap()).unwrap();
        assert_eq!(c.estimator.bandwidth, 2.5);
        assert_eq!(c.nuisance.pi, PiChoice::Constant(0.5));
        assert_eq!(c.nuisance.mu, MuChoice::Constant(0.0));
        assert!(c.exposure.inclusive);
        assert_eq!(c.exposure.target, vec![0, 0, 1]);
        assert!(c.estimator.heterogeneity.effect && c.estimator.heterogeneity.probability);
        let spec = c.exposure.spec(3).unwrap();
        assert_eq!(spec.time, 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            KeyValues::parse("novalue"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            KeyValues::parse("a=1\na=2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        let kv = KeyValues::parse("estimator.bandwith = 1").unwrap();
        assert!(matches!(
            RunConfig::from_key_values(&kv),
            Err(ConfigError::UnknownKey(_))
        ));
        for text in [
            "estimator.bandwidth = -1",
            "estimator.ci_level = 1",
            "nuisance.pi = constant:1.5",
            "exposure.target = 0,2",
            "exposure.lag = 0",
        ] {
            let kv = KeyValues::parse(text).unwrap();
            assert!(RunConfig::from_key_values(&kv).is_err(), "{text}");
        }
    }

    #[test]
    fn spec_checks_history_length() {
        let c = RunConfig::default();
        assert!(c.exposure.spec(2).is_ok());
        assert!(c.exposure.spec(3).is_err());
    }
}
