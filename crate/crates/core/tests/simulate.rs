use casf_core::estimator::EstimatorConfig;
use casf_core::exec::{stream_rng, Execution};
use casf_core::oracle::random_model;
use casf_core::simulate::{monte_carlo, sample_discrete, GaussianLinearDgp, MonteCarloConfig, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Self-normalized importance sampling of `E[y0(x1, U) | X = x2]` from
/// `W* ~ N(0, 1)` with weights `p(x2 | W*)`.
fn mc_casf(dgp: &GaussianLinearDgp, x1: f64, x2: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, 0);
    let (mut num, mut den) = (0.0, 0.0);
    for _ in 0..draws {
        let w: f64 = rng.sample(StandardNormal);
        let weight = (-0.5 * (x2 - dgp.alpha * w).powi(2)).exp();
        num += weight * (dgp.b0 + dgp.b1 * x1 + dgp.b2 * w);
        den += weight;
    }
    num / den
}

#[test]
fn analytic_casf_matches_ten_million_draw_integration() {
    let dgp = GaussianLinearDgp {
        b0: 1.0,
        b1: 1.0,
        b2: 1.0,
        alpha: 1.0,
        ..Default::default()
    };
    for (k, (x1, x2)) in [(1.0, -1.0), (0.0, 0.0), (-0.5, 1.5)].into_iter().enumerate() {
        let mc = mc_casf(&dgp, x1, x2, 10_000_000, 100 + k as u64);
        assert!((mc - dgp.analytic_casf(x1, x2)).abs() < 1e-3, "({x1},{x2}): {mc}");
    }
    assert_eq!(dgp.analytic_casf(1.0, -1.0), 1.5);
}

#[test]
fn discrete_truth_matches_simulated_conditional_means() {
    // On the diagonal the CASF is the mean outcome among units at that level.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = random_model(&mut rng, 3, 2, 4, 4, 0.02);
    let n = 1_000_000;
    let data = sample_discrete(&model, 1.0, n, 2).unwrap();
    for x in 0..2 {
        let ys: Vec<f64> = (0..n).filter(|&i| data.x[(i, 0)] as usize == x).map(|i| data.y[i]).collect();
        let m = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / m;
        let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        assert!((mean - model.true_casf(x, x)).abs() < 3.0 * sd / m.sqrt());
    }
}

fn scenario() -> Scenario {
    Scenario::Gaussian(GaussianLinearDgp::default())
}

fn mc_config(reps: usize, n_list: Vec<usize>, seed: u64) -> MonteCarloConfig {
    MonteCarloConfig {
        estimator: EstimatorConfig::power_series(1, 1, 1, 2),
        n_list,
        reps,
        seed,
        targets: vec![(vec![1.0], vec![-1.0])],
        naive: true,
        execution: Execution::default(),
    }
}

#[test]
fn reports_are_reproducible_and_thread_invariant() {
    let cfg = mc_config(1, vec![200], 7);
    assert_eq!(monte_carlo(&scenario(), &cfg).unwrap(), monte_carlo(&scenario(), &cfg).unwrap());

    let par = mc_config(8, vec![200, 400], 8);
    let seq = MonteCarloConfig {
        execution: Execution::Sequential,
        ..par.clone()
    };
    let a = monte_carlo(&scenario(), &par).unwrap();
    let b = monte_carlo(&scenario(), &seq).unwrap();
    assert_eq!(a.per_n, b.per_n);
}

#[test]
fn errors_shrink_and_naive_is_biased() {
    let report = monte_carlo(&scenario(), &mc_config(40, vec![400, 1600, 6400], 9)).unwrap();
    let med: Vec<f64> = report.per_n.iter().map(|s| s.proxy_median_abs_error[0]).collect();
    assert!(med[2] < med[0], "{med:?}");
    let last = &report.per_n[2];
    assert!(last.naive_median_abs_error.as_ref().unwrap()[0] > last.proxy_median_abs_error[0]);
    assert_eq!(report.truth, vec![1.5]);
    let limit = report.naive_limit.unwrap()[0];
    assert!((limit - 1.5).abs() > 0.3);
}

#[test]
fn discrete_scenario_runs_with_saturated_bases() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let model = random_model(&mut rng, 2, 2, 2, 2, 0.1);
    let scenario = Scenario::Discrete { model, noise_sd: 0.5 };
    let cfg = MonteCarloConfig {
        estimator: EstimatorConfig::saturated(1, 1, 1, 1e-8),
        targets: vec![(vec![0.0], vec![1.0]), (vec![1.0], vec![1.0])],
        naive: false,
        ..mc_config(3, vec![3000], 11)
    };
    let report = monte_carlo(&scenario, &cfg).unwrap();
    assert_eq!(report.per_n[0].reps.len(), 3);
    assert!(report.per_n[0].naive_median_abs_error.is_none());
    assert!(report.truth.iter().all(|t| t.is_finite()));
}

#[test]
fn bad_configs_are_rejected() {
    assert!(monte_carlo(&scenario(), &mc_config(0, vec![100], 1)).is_err());
    assert!(monte_carlo(&scenario(), &mc_config(1, vec![], 1)).is_err());
    let two_dim = MonteCarloConfig {
        targets: vec![(vec![1.0, 2.0], vec![0.0])],
        ..mc_config(1, vec![100], 1)
    };
    assert!(monte_carlo(&scenario(), &two_dim).is_err());
}
