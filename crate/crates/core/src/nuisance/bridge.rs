//! From treatment-level propensities to exposure-history propensities.
//!
//! Treatments `Z_jt` are independent across intervention units and periods
//! given covariates, so the probability of an exposure history is an
//! integral over a product of Bernoulli laws. It is evaluated either by
//! Monte Carlo or, for small interference sets, by full enumeration.

use rand::Rng;
use rayon::prelude::*;

use super::NuisanceError;
use crate::exposure::{Exposure, ExposureMapping};
use crate::graph::InterferenceMatrix;
use crate::seed;

/// Largest number of free Bernoulli variables enumerated exactly.
pub const MAX_EXHAUSTIVE: usize = 20;

/// Default Monte Carlo draw count per unit.
pub const DEFAULT_DRAWS: usize = 20_000;

/// `P(Z_jt = 1 | X)` for intervention unit `j` in period `t`.
pub trait TreatmentPropensity: Sync {
    fn probability(&self, j: usize, t: usize) -> f64;
}

impl<F> TreatmentPropensity for F
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    fn probability(&self, j: usize, t: usize) -> f64 {
        self(j, t)
    }
}

/// Tabulated propensities indexed `[period][intervention unit]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodPropensities(pub Vec<Vec<f64>>);

impl TreatmentPropensity for PeriodPropensities {
    fn probability(&self, j: usize, t: usize) -> f64 {
        self.0[t][j]
    }
}

/// Interference rows of one outcome unit, one per period of the queried
/// history. A single row is reused for every period.
#[derive(Debug, Clone, Copy)]
pub struct HistoryQuery<'a> {
    pub rows: &'a [&'a [(usize, f64)]],
    pub mapping: &'a ExposureMapping,
    pub history: &'a [Exposure],
    pub unit: usize,
}

struct Layout<'a> {
    rows: Vec<&'a [(usize, f64)]>,
    /// `(period, intervention unit, probability)` per Bernoulli variable.
    vars: Vec<(usize, usize, f64)>,
    /// Variable index of each row entry, per period.
    slots: Vec<Vec<usize>>,
    width: usize,
}

fn layout<'a>(
    query: &HistoryQuery<'a>,
    propensity: &dyn TreatmentPropensity,
) -> Result<Layout<'a>, NuisanceError> {
    let periods = query.history.len();
    if query.rows.is_empty() || (query.rows.len() != 1 && query.rows.len() != periods) {
        return Err(NuisanceError::DimensionMismatch(format!(
            "{} interference rows for a history of length {periods}",
            query.rows.len()
        )));
    }
    let rows: Vec<&[(usize, f64)]> = (0..periods)
        .map(|t| query.rows[if query.rows.len() == 1 { 0 } else { t }])
        .collect();
    let mut vars = Vec::new();
    let mut slots = Vec::with_capacity(periods);
    let mut width = 0;
    for (t, row) in rows.iter().enumerate() {
        if row.iter().all(|&(_, w)| w == 0.0) {
            return Err(NuisanceError::EmptyInterferenceSet(query.unit));
        }
        let mut s = Vec::with_capacity(row.len());
        for &(j, _) in row.iter() {
            let p = propensity.probability(j, t);
            if !(0.0..=1.0).contains(&p) {
                return Err(NuisanceError::InvalidProbability(p));
            }
            width = width.max(j + 1);
            s.push(vars.len());
            vars.push((t, j, p));
        }
        slots.push(s);
    }
    Ok(Layout {
        rows,
        vars,
        slots,
        width,
    })
}

fn history_matches(
    layout: &Layout<'_>,
    query: &HistoryQuery<'_>,
    values: &[bool],
    z: &mut [bool],
) -> Result<bool, NuisanceError> {
    let mut matched = true;
    for (t, row) in layout.rows.iter().enumerate() {
        for (&(j, _), &v) in row.iter().zip(&layout.slots[t]) {
            z[j] = values[v];
        }
        let g = query.mapping.apply(z, row, query.unit)?;
        matched &= g == query.history[t];
        for &(j, _) in row.iter() {
            z[j] = false;
        }
    }
    Ok(matched)
}

/// Fraction of `draws` simulated treatment histories whose induced exposure
/// history equals `query.history`. The stream is keyed by `(seed, unit)`,
/// so target and reference queries for one unit share random numbers.
pub fn mc_exposure_propensity(
    propensity: &dyn TreatmentPropensity,
    query: &HistoryQuery<'_>,
    draws: usize,
    seed: u64,
) -> Result<f64, NuisanceError> {
    if draws == 0 {
        return Err(NuisanceError::InvalidDraws);
    }
    let layout = layout(query, propensity)?;
    let mut rng = seed::rng_for(seed, query.unit as u64);
    let mut values = vec![false; layout.vars.len()];
    let mut z = vec![false; layout.width];
    let mut hits = 0usize;
    for _ in 0..draws {
        for (v, &(_, _, p)) in values.iter_mut().zip(&layout.vars) {
            *v = rng.random::<f64>() < p;
        }
        if history_matches(&layout, query, &values, &mut z)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / draws as f64)
}

/// Exact probability by enumerating every configuration of the free
/// (non-degenerate) treatment variables.
pub fn exhaustive_exposure_propensity(
    propensity: &dyn TreatmentPropensity,
    query: &HistoryQuery<'_>,
) -> Result<f64, NuisanceError> {
    let layout = layout(query, propensity)?;
    let mut values: Vec<bool> = layout.vars.iter().map(|&(_, _, p)| p >= 1.0).collect();
    let free: Vec<usize> = (0..layout.vars.len())
        .filter(|&v| {
            let p = layout.vars[v].2;
            p > 0.0 && p < 1.0
        })
        .collect();
    if free.len() > MAX_EXHAUSTIVE {
        return Err(NuisanceError::InterferenceSetTooLarge {
            unit: query.unit,
            size: free.len(),
        });
    }
    let mut z = vec![false; layout.width];
    let mut total = 0.0;
    for mask in 0u64..(1u64 << free.len()) {
        let mut prob = 1.0;
        for (bit, &v) in free.iter().enumerate() {
            let on = mask >> bit & 1 == 1;
            values[v] = on;
            let p = layout.vars[v].2;
            prob *= if on { p } else { 1.0 - p };
        }
        if history_matches(&layout, query, &values, &mut z)? {
            total += prob;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PropensityMethod {
    MonteCarlo {
        draws: usize,
        seed: u64,
    },
    Exhaustive,
    /// Exhaustive when the free set is small enough, Monte Carlo otherwise.
    Auto {
        draws: usize,
        seed: u64,
    },
}

/// Exposure-history propensity for every outcome unit. Units with an empty
/// interference set in some period yield `None`.
pub fn exposure_propensities(
    propensity: &dyn TreatmentPropensity,
    weights: &[InterferenceMatrix],
    mapping: &ExposureMapping,
    history: &[Exposure],
    method: PropensityMethod,
) -> Result<Vec<Option<f64>>, NuisanceError> {
    let n = weights.first().map_or(0, InterferenceMatrix::row_count);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let rows: Vec<&[(usize, f64)]> = weights.iter().map(|w| w.row(i)).collect();
            let query = HistoryQuery {
                rows: &rows,
                mapping,
                history,
                unit: i,
            };
            let result = match method {
                PropensityMethod::MonteCarlo { draws, seed } => {
                    mc_exposure_propensity(propensity, &query, draws, seed)
                }
                PropensityMethod::Exhaustive => exhaustive_exposure_propensity(propensity, &query),
                PropensityMethod::Auto { draws, seed } => {
                    match exhaustive_exposure_propensity(propensity, &query) {
                        Err(NuisanceError::InterferenceSetTooLarge { .. }) => {
                            mc_exposure_propensity(propensity, &query, draws, seed)
                        }
                        other => other,
                    }
                }
            };
            match result {
                Ok(p) => Ok(Some(p)),
                Err(NuisanceError::EmptyInterferenceSet(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single<'a>(
        row: &'a [&'a [(usize, f64)]],
        mapping: &'a ExposureMapping,
        history: &'a [Exposure],
    ) -> HistoryQuery<'a> {
        HistoryQuery {
            rows: row,
            mapping,
            history,
            unit: 0,
        }
    }

    #[test]
    fn degenerate_propensities() {
        let row: &[(usize, f64)] = &[(0, 1.0), (1, 1.0), (2, 1.0)];
        let rows = [row];
        let mapping = ExposureMapping::threshold_inclusive(0.5);
        let q = single(&rows, &mapping, &[1]);
        let ones = |_: usize, _: usize| 1.0;
        let zeros = |_: usize, _: usize| 0.0;
        assert_eq!(mc_exposure_propensity(&ones, &q, 100, 1).unwrap(), 1.0);
        assert_eq!(mc_exposure_propensity(&zeros, &q, 100, 1).unwrap(), 0.0);
        assert_eq!(exhaustive_exposure_propensity(&ones, &q).unwrap(), 1.0);
    }

    #[test]
    fn three_neighbors_half() {
        let row: &[(usize, f64)] = &[(0, 1.0), (1, 1.0), (2, 1.0)];
        let rows = [row];
        let mapping = ExposureMapping::threshold(0.5);
        let q = single(&rows, &mapping, &[1]);
        let half = |_: usize, _: usize| 0.5;
        assert_eq!(exhaustive_exposure_propensity(&half, &q).unwrap(), 0.5);
        let r = 20_000;
        let mc = mc_exposure_propensity(&half, &q, r, 9).unwrap();
        assert!((mc - 0.5).abs() <= 3.0 * (0.25 / r as f64).sqrt());
    }

    #[test]
    fn single_neighbor() {
        let row: &[(usize, f64)] = &[(4, 1.0)];
        let rows = [row];
        let mapping = ExposureMapping::threshold(0.5);
        let q = single(&rows, &mapping, &[1]);
        let p = |_: usize, _: usize| 0.3;
        assert!((exhaustive_exposure_propensity(&p, &q).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn two_period_history_multiplies() {
        let row: &[(usize, f64)] = &[(0, 1.0)];
        let rows = [row];
        let mapping = ExposureMapping::threshold(0.5);
        let p = |_: usize, t: usize| if t == 0 { 0.2 } else { 0.7 };
        let q = single(&rows, &mapping, &[0, 1]);
        let v = exhaustive_exposure_propensity(&p, &q).unwrap();
        assert!((v - 0.8 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn too_large_and_empty() {
        let row: Vec<(usize, f64)> = (0..21).map(|j| (j, 1.0)).collect();
        let rows = [row.as_slice()];
        let mapping = ExposureMapping::threshold(0.5);
        let q = single(&rows, &mapping, &[1]);
        let half = |_: usize, _: usize| 0.5;
        assert!(matches!(
            exhaustive_exposure_propensity(&half, &q),
            Err(NuisanceError::InterferenceSetTooLarge { size: 21, .. })
        ));
        let empty: &[(usize, f64)] = &[];
        let rows = [empty];
        let q = single(&rows, &mapping, &[1]);
        assert!(matches!(
            mc_exposure_propensity(&half, &q, 10, 0),
            Err(NuisanceError::EmptyInterferenceSet(0))
        ));
    }

    #[test]
    fn mc_is_deterministic_given_seed() {
        let row: &[(usize, f64)] = &[(0, 0.3), (1, 0.7)];
        let rows = [row];
        let mapping = ExposureMapping::threshold(0.5);
        let q = single(&rows, &mapping, &[1]);
        let p = |j: usize, _: usize| 0.2 + 0.3 * j as f64;
        let a = mc_exposure_propensity(&p, &q, 5000, 42).unwrap();
        let b = mc_exposure_propensity(&p, &q, 5000, 42).unwrap();
        assert_eq!(a, b);
    }
}
