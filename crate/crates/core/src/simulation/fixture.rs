//! Synthetic bipartite interference matrix.
//!
//! Outcome and intervention units are scattered in the unit square. Each
//! outcome unit is linked to its `k` nearest intervention units with weights
//! decaying exponentially in distance, so the closest unit usually dominates.

use rand::Rng;

use crate::graph::InterferenceMatrix;
use crate::seed;

/// Decay length of the distance weights.
pub const DECAY: f64 = 0.02;

pub const FIXTURE_ROWS: usize = 1200;
pub const FIXTURE_COLS: usize = 200;
pub const FIXTURE_NEIGHBORS: usize = 5;
pub const FIXTURE_SEED: u64 = 2007;

/// Path of the shipped fixture, relative to the crate root.
pub const FIXTURE_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/bipartite_w.csv");

/// Outcome units kept from the fixture by default.
pub const DEFAULT_ROWS: usize = 1000;

pub fn synthetic_interference(n: usize, m: usize, k: usize, seed: u64) -> InterferenceMatrix {
    let mut rng = seed::rng_for(seed, 0);
    let mut point = || [rng.random::<f64>(), rng.random::<f64>()];
    let plants: Vec<[f64; 2]> = (0..m).map(|_| point()).collect();
    let counties: Vec<[f64; 2]> = (0..n).map(|_| point()).collect();
    let k = k.min(m);
    let mut triplets = Vec::with_capacity(n * k);
    for (i, c) in counties.iter().enumerate() {
        let mut near: Vec<(f64, usize)> = plants
            .iter()
            .enumerate()
            .map(|(j, p)| (((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt(), j))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let d0 = near[0].0;
        for &(d, j) in &near[..k] {
            // relative to the nearest plant so weights stay in (0, 1]
            triplets.push((i, j, (-(d - d0) / DECAY).exp()));
        }
    }
    InterferenceMatrix::from_triplets(n, m, &triplets).expect("generated weights lie in (0, 1]")
}
