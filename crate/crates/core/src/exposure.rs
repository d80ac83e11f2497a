//! Exposure mappings, exposure histories and neighbor covariate summaries.
//!
//! An exposure collapses every intervention unit's treatment and one outcome
//! unit's interference row into a binary value. Histories stack those values
//! over periods `0..=t`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::graph::InterferenceMatrix;

/// Exposure codomain. Only `{0, 1}` is produced by the built-in mapping.
pub type Exposure = u8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExposureError {
    #[error("outcome unit {0} has an empty interference set")]
    EmptyInterferenceSet(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid exposure spec: {0}")]
    InvalidSpec(String),
}

/// How the weighted treated share is compared with the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Comparison {
    /// `share > c`
    Strict,
    /// `share >= c`
    NonStrict,
}

impl Comparison {
    fn holds(self, share: f64, c: f64) -> bool {
        match self {
            Comparison::Strict => share > c,
            Comparison::NonStrict => share >= c,
        }
    }
}

/// User-supplied mapping: treatments of all intervention units and one
/// interference row to an exposure value.
pub type CustomMapping = Arc<dyn Fn(&[bool], &[(usize, f64)]) -> Exposure + Send + Sync>;

#[derive(Clone)]
pub enum ExposureMapping {
    /// `1(Σ w_j z_j / Σ w_j  ⋈  c)`
    Threshold {
        threshold: f64,
        comparison: Comparison,
    },
    Custom(CustomMapping),
}

impl ExposureMapping {
    pub fn threshold(threshold: f64) -> Self {
        ExposureMapping::Threshold {
            threshold,
            comparison: Comparison::Strict,
        }
    }

    pub fn threshold_inclusive(threshold: f64) -> Self {
        ExposureMapping::Threshold {
            threshold,
            comparison: Comparison::NonStrict,
        }
    }

    /// Exposure of one outcome unit given its interference row.
    /// `unit` is only used for error reporting.
    pub fn apply(
        &self,
        treatments: &[bool],
        row: &[(usize, f64)],
        unit: usize,
    ) -> Result<Exposure, ExposureError> {
        if row.iter().all(|&(_, w)| w == 0.0) {
            return Err(ExposureError::EmptyInterferenceSet(unit));
        }
        match self {
            ExposureMapping::Threshold {
                threshold,
                comparison,
            } => weighted_proportion_exposure(treatments, row, *threshold, *comparison)
                .map_err(|_| ExposureError::EmptyInterferenceSet(unit)),
            ExposureMapping::Custom(f) => Ok(f(treatments, row)),
        }
    }
}

impl fmt::Debug for ExposureMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExposureMapping::Threshold {
                threshold,
                comparison,
            } => f
                .debug_struct("Threshold")
                .field("threshold", threshold)
                .field("comparison", comparison)
                .finish(),
            ExposureMapping::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Thresholded weighted proportion of treated intervention units.
///
/// `row` holds `(intervention unit, weight)` pairs; `treatments` is indexed
/// by intervention unit.
pub fn weighted_proportion_exposure(
    treatments: &[bool],
    row: &[(usize, f64)],
    threshold: f64,
    comparison: Comparison,
) -> Result<Exposure, ExposureError> {
    let mut total = 0.0;
    let mut treated = 0.0;
    for &(j, w) in row {
        total += w;
        if treatments[j] {
            treated += w;
        }
    }
    if total <= 0.0 {
        return Err(ExposureError::EmptyInterferenceSet(usize::MAX));
    }
    Ok(comparison.holds(treated / total, threshold) as Exposure)
}

/// Target and reference histories being contrasted at time `time` with lag
/// `lag`.
#[derive(Debug, Clone)]
pub struct ExposureSpec {
    pub mapping: ExposureMapping,
    /// `ḡ_t`, entries for periods `0..=time`.
    pub target: Vec<Exposure>,
    /// `ḡ'_t`, entries for periods `0..=time`.
    pub reference: Vec<Exposure>,
    pub time: usize,
    pub lag: usize,
}

impl ExposureSpec {
    pub fn new(
        mapping: ExposureMapping,
        target: Vec<Exposure>,
        reference: Vec<Exposure>,
        time: usize,
        lag: usize,
    ) -> Result<Self, ExposureError> {
        let spec = Self {
            mapping,
            target,
            reference,
            time,
            lag,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Two-period contrast `(0, 1)` vs `(0, 0)` used by every simulation.
    pub fn two_period(mapping: ExposureMapping) -> Self {
        Self::new(mapping, vec![0, 1], vec![0, 0], 1, 1).expect("valid two-period spec")
    }

    pub fn validate(&self) -> Result<(), ExposureError> {
        if self.lag < 1 || self.lag > self.time {
            return Err(ExposureError::InvalidSpec(format!(
                "lag {} must satisfy 1 <= lag <= time {}",
                self.lag, self.time
            )));
        }
        let len = self.time + 1;
        if self.target.len() != len || self.reference.len() != len {
            return Err(ExposureError::InvalidSpec(format!(
                "histories must have {len} entries (periods 0..={})",
                self.time
            )));
        }
        let shared = self.time - self.lag;
        if self.target[..=shared] != self.reference[..=shared] {
            return Err(ExposureError::InvalidSpec(format!(
                "target and reference histories must agree on periods 0..={shared}"
            )));
        }
        if self.target == self.reference {
            return Err(ExposureError::InvalidSpec(
                "target and reference histories are identical".into(),
            ));
        }
        if let ExposureMapping::Threshold { threshold, .. } = self.mapping {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(ExposureError::InvalidSpec(format!(
                    "threshold {threshold} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Realized exposure histories, one per outcome unit.
///
/// A unit whose interference set is empty in some period has no defined
/// exposure and is stored as `None`; it never matches any history.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposurePanel {
    histories: Vec<Option<Vec<Exposure>>>,
    periods: usize,
}

impl ExposurePanel {
    pub fn from_histories(histories: Vec<Option<Vec<Exposure>>>, periods: usize) -> Self {
        Self { histories, periods }
    }

    pub fn unit_count(&self) -> usize {
        self.histories.len()
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn history(&self, unit: usize) -> Option<&[Exposure]> {
        self.histories[unit].as_deref()
    }

    /// Units whose exposure is undefined in at least one period.
    pub fn flagged(&self) -> Vec<usize> {
        self.histories
            .iter()
            .enumerate()
            .filter(|(_, h)| h.is_none())
            .map(|(i, _)| i)
            .collect()
    }

    /// `1(Ḡ_i = h)` on the first `h.len()` periods.
    pub fn match_history(&self, unit: usize, history: &[Exposure]) -> bool {
        match &self.histories[unit] {
            Some(own) => history.len() <= own.len() && own[..history.len()] == *history,
            None => false,
        }
    }
}

/// Applies the mapping period by period. `treatments[t]` is indexed by
/// intervention unit; `weights` holds one matrix per period, or a single
/// matrix reused for every period.
pub fn exposure_history(
    treatments: &[Vec<bool>],
    weights: &[InterferenceMatrix],
    mapping: &ExposureMapping,
) -> Result<ExposurePanel, ExposureError> {
    let periods = treatments.len();
    if weights.is_empty() {
        return Err(ExposureError::DimensionMismatch(
            "no interference matrix supplied".into(),
        ));
    }
    if weights.len() != 1 && weights.len() != periods {
        return Err(ExposureError::DimensionMismatch(format!(
            "{} treatment periods but {} interference matrices",
            periods,
            weights.len()
        )));
    }
    let n = weights[0].row_count();
    let m = weights[0].col_count();
    for w in weights {
        if w.row_count() != n || w.col_count() != m {
            return Err(ExposureError::DimensionMismatch(
                "interference matrices differ in shape across periods".into(),
            ));
        }
    }
    for (t, z) in treatments.iter().enumerate() {
        if z.len() != m {
            return Err(ExposureError::DimensionMismatch(format!(
                "period {t} has {} treatments for {m} intervention units",
                z.len()
            )));
        }
    }
    let histories = (0..n)
        .map(|i| {
            let mut h = Vec::with_capacity(periods);
            for (t, z) in treatments.iter().enumerate() {
                let w = if weights.len() == 1 {
                    &weights[0]
                } else {
                    &weights[t]
                };
                match mapping.apply(z, w.row(i), i) {
                    Ok(g) => h.push(g),
                    Err(ExposureError::EmptyInterferenceSet(_)) => return None,
                    Err(_) => unreachable!("apply only reports empty interference sets"),
                }
            }
            Some(h)
        })
        .collect();
    Ok(ExposurePanel::from_histories(histories, periods))
}

/// Staggered-adoption cohort of a binary history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Cohort {
    /// First period with exposure 1 in a `0…0,1…1` history.
    Adopted(usize),
    AlwaysZero,
    NotStaggered,
}

impl Cohort {
    /// The canonical history of length `len` for this cohort.
    pub fn history(self, len: usize) -> Option<Vec<Exposure>> {
        match self {
            Cohort::Adopted(k) if k < len => Some((0..len).map(|t| (t >= k) as Exposure).collect()),
            Cohort::AlwaysZero => Some(vec![0; len]),
            _ => None,
        }
    }
}

pub fn classify_staggered_cohort(history: &[Exposure]) -> Cohort {
    match history.iter().position(|&g| g != 0) {
        None => Cohort::AlwaysZero,
        Some(k) if history[k..].iter().all(|&g| g == 1) && history[..k].iter().all(|&g| g == 0) => {
            Cohort::Adopted(k)
        }
        Some(_) => Cohort::NotStaggered,
    }
}

/// Own covariates followed by the interference-weighted mean of neighbor
/// covariates. `exclude` drops one column of the row (the unit itself in a
/// unipartite design).
pub fn summarize_neighbor_covariates(
    row: &[(usize, f64)],
    neighbor_covariates: &[Vec<f64>],
    own: &[f64],
    exclude: Option<usize>,
    unit: usize,
) -> Result<Vec<f64>, ExposureError> {
    let entries: Vec<(usize, f64)> = row
        .iter()
        .copied()
        .filter(|&(j, w)| Some(j) != exclude && w != 0.0)
        .collect();
    let total: f64 = entries.iter().map(|&(_, w)| w).sum();
    if entries.is_empty() || total <= 0.0 {
        return Err(ExposureError::EmptyInterferenceSet(unit));
    }
    let dim = neighbor_covariates[entries[0].0].len();
    let mut avg = vec![0.0; dim];
    for &(j, w) in &entries {
        let x = &neighbor_covariates[j];
        if x.len() != dim {
            return Err(ExposureError::DimensionMismatch(format!(
                "intervention unit {j} has {} covariates, expected {dim}",
                x.len()
            )));
        }
        for (a, v) in avg.iter_mut().zip(x) {
            *a += w * v;
        }
    }
    let mut out = own.to_vec();
    out.extend(avg.into_iter().map(|a| a / total));
    Ok(out)
}
