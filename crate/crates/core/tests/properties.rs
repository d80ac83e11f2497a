use nalgebra::DMatrix;
use proptest::prelude::*;

use netdid::estimator::{dr_aee, hac_variance, influence_values, EstimationSample, Kernel};
use netdid::graph::{DistanceOracle, InterferenceMatrix, Network};
use netdid::nuisance::{
    empirical_exposure_prob, fit_logistic_irls, KernelRegressor, NuisanceBundle, P1Source,
};
use netdid::simulation::study::{Outcome, ReplicationSummary};

fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<usize>>> {
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for &(a, b) in edges {
        if a != b {
            d[a][b] = Some(1);
            d[b][a] = Some(1);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(x), Some(y)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|cur| x + y < cur) {
                        d[i][j] = Some(x + y);
                    }
                }
            }
        }
    }
    d
}

fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..25).prop_flat_map(|n| {
        let edge = (0..n, 0..n).prop_filter("no self-loops", |(a, b)| a != b);
        (Just(n), prop::collection::vec(edge, 0..3 * n))
    })
}

/// Units with both groups present, nuisance values and outcome changes.
fn dataset() -> impl Strategy<Value = (Vec<bool>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (4usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n).prop_filter("both groups", |g| {
                g.iter().any(|&b| b) && g.iter().any(|&b| !b)
            }),
            prop::collection::vec(-50.0..50.0f64, n),
            prop::collection::vec(0.05..0.95f64, n),
            prop::collection::vec(0.05..0.95f64, n),
            prop::collection::vec(-10.0..10.0f64, n),
        )
    })
}

fn estimate_tau(
    g: &[bool],
    dy: Vec<f64>,
    pt: Vec<f64>,
    pr: Vec<f64>,
    mu: Vec<f64>,
) -> (f64, Vec<f64>) {
    let n = g.len();
    let p = empirical_exposure_prob(g).unwrap();
    let bundle = NuisanceBundle::new(pt, pr, mu, vec![p; n], P1Source::Empirical, 0.01).unwrap();
    let reference = g.iter().map(|&b| !b).collect();
    let sample = EstimationSample::new(dy, g.to_vec(), reference);
    let mut est = dr_aee(&sample, &bundle).unwrap();
    let phi = influence_values(&mut est.contributions, est.tau);
    (est.tau, phi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bfs_matches_floyd_warshall((n, edges) in graph()) {
        let net = Network::new(n, &edges).unwrap();
        let oracle = DistanceOracle::new(&net);
        let fw = floyd_warshall(n, &edges);
        for i in 0..n {
            for k in 0..n {
                prop_assert_eq!(oracle.path_distance(i, k).unwrap(), fw[i][k]);
            }
        }
    }

    #[test]
    fn logistic_solves_score_equation(
        xs in prop::collection::vec(-2.0..2.0f64, 30..120),
        seed in any::<u64>(),
    ) {
        // responses alternate around a smooth curve so the data are never separable
        let n = xs.len();
        let y: Vec<f64> = (0..n)
            .map(|i| ((i as u64).wrapping_mul(seed | 1) % 3 == 0) as u8 as f64)
            .collect();
        prop_assume!(y.iter().any(|&v| v == 1.0) && y.iter().any(|&v| v == 0.0));
        let x = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { xs[i] });
        if let Ok(fit) = fit_logistic_irls(&x, &y, 100, 1e-10) {
            prop_assume!(fit.warnings.is_empty());
            let p = fit.predict(&x);
            for k in 0..2 {
                let score: f64 = (0..n).map(|i| x[(i, k)] * (y[i] - p[i])).sum();
                prop_assert!(score.abs() < 1e-6, "score {}", score);
            }
        }
    }

    #[test]
    fn kernel_predictions_are_convex_combinations(
        pts in prop::collection::vec((-5.0..5.0f64, -20.0..20.0f64), 2..60),
        q in -8.0..8.0f64,
        h in 0.1..3.0f64,
    ) {
        let x: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0]).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let model = KernelRegressor::fit(x, y.clone(), Some(vec![h])).unwrap();
        let v = model.predict(&[q]);
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
    }

    #[test]
    fn influence_values_sum_to_zero((g, dy, pt, pr, mu) in dataset()) {
        let (_, phi) = estimate_tau(&g, dy, pt, pr, mu);
        prop_assert!(phi.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn estimate_invariant_to_outcome_shift((g, dy, pt, pr, mu) in dataset(), c in -100.0..100.0f64) {
        let shifted: Vec<f64> = dy.iter().map(|v| v + c).collect();
        let (a, _) = estimate_tau(&g, dy, pt.clone(), pr.clone(), mu.clone());
        let (b, _) = estimate_tau(&g, shifted, pt, pr, mu);
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + c.abs()), "{} vs {}", a, b);
    }

    #[test]
    fn hac_monotone_in_bandwidth_for_nonnegative_values(
        phi in prop::collection::vec(0.0..5.0f64, 3..40),
        b in 0usize..6,
    ) {
        let net = Network::ring(phi.len());
        let oracle = DistanceOracle::new(&net);
        let lower = hac_variance(&phi, &oracle, Kernel::Uniform, b as f64).unwrap().value;
        let upper = hac_variance(&phi, &oracle, Kernel::Uniform, (b + 1) as f64).unwrap().value;
        prop_assert!(upper >= lower - 1e-12);
    }

    #[test]
    fn mse_decomposes(est in prop::collection::vec(-3.0..3.0f64, 2..50), truth in -1.0..1.0f64) {
        let outcomes: Vec<Result<Outcome, String>> = est
            .iter()
            .map(|&e| Ok(Outcome { estimate: e, se: 1.0, truth, lo: e - 2.0, hi: e + 2.0 }))
            .collect();
        let s = ReplicationSummary::from_outcomes("s", "v", 1, &outcomes);
        let n = est.len() as f64;
        let identity = s.bias * s.bias + s.ese * s.ese * (n - 1.0) / n;
        prop_assert!((s.mse - identity).abs() < 1e-10 * (1.0 + s.mse));
    }

    #[test]
    fn interference_csv_round_trip(
        triplets in prop::collection::vec((0usize..8, 0usize..6, 0.0..=1.0f64), 0..30),
    ) {
        let w = InterferenceMatrix::from_triplets(8, 6, &triplets).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        netdid::io::write_interference(&path, &w).unwrap();
        let back = netdid::io::read_interference_panel(&path, Some((8, 6))).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0], &w);
    }
}
