use casf_core::estimator::{
    asf_average, distributional_casf, effect_table, fit, fit_naive, quantile_grid, scaled_effect_curve, Dataset,
    EstimatorConfig, Penalties, Penalty,
};
use casf_core::oracle::{DiscreteModel, EmpiricalTable};
use casf_core::simulate::{sample_discrete, sample_gaussian, GaussianLinearDgp};
use casf_core::Error;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian_config(degree: usize) -> EstimatorConfig {
    EstimatorConfig::power_series(1, 1, 1, degree)
}

fn fixed_config(degree: usize) -> EstimatorConfig {
    EstimatorConfig {
        penalties: Penalties::fixed(1e-4),
        ..gaussian_config(degree)
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

// Diagonal-dominant proxy channels keep every operator well conditioned;
// the treatment channel and structural means are random.
fn well_conditioned_model(seed: u64, nx: usize) -> DiscreteModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nw = 3;
    let channel = |w: usize| -> Vec<f64> { (0..nw).map(|k| if k == w { 0.7 } else { 0.15 }).collect() };
    let p_x_given_w: Vec<Vec<f64>> = (0..nw)
        .map(|_| {
            let raw: Vec<f64> = (0..nx).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|r| r / total).collect()
        })
        .collect();
    let p_xz_given_w = (0..nw)
        .map(|w| {
            (0..nx)
                .map(|x| channel(w).iter().map(|pz| p_x_given_w[w][x] * pz).collect())
                .collect()
        })
        .collect();
    let model = DiscreteModel {
        p_w: vec![0.3, 0.3, 0.4],
        p_xz_given_w,
        p_v_given_w: (0..nw).map(channel).collect(),
        mu: (0..nx).map(|_| (0..nw).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect(),
    };
    model.validate().unwrap();
    model
}

#[test]
fn saturated_fit_equals_empirical_plug_in() {
    let model = well_conditioned_model(11, 2);
    let data = sample_discrete(&model, 1.0, 2000, 12).unwrap();
    let fitted = fit(&data, &EstimatorConfig::saturated(1, 1, 1, 1e-10)).unwrap();
    let table = EmpiricalTable::from_dataset(&data).unwrap();
    for x1 in 0..2 {
        for x2 in 0..2 {
            let oracle = table.law.casf_via_gamma(x1, x2).unwrap();
            let est = fitted.casf(&[x1 as f64], &[x2 as f64]).unwrap();
            assert!((est - oracle).abs() < 1e-6, "({x1},{x2}): {est} vs {oracle}");
        }
    }
}

#[test]
fn huge_penalty_sends_everything_to_zero() {
    let data = sample_gaussian(&GaussianLinearDgp::default(), 500, 1);
    let config = EstimatorConfig {
        penalties: Penalties {
            lambda0: Penalty::Fixed(1e12),
            ..Penalties::fixed(1e-3)
        },
        penalize_intercept: true,
        ..gaussian_config(2)
    };
    let fitted = fit(&data, &config).unwrap();
    assert!(fitted.theta_hat.norm() < 1e-6);
    for (a, b) in [(1.0, -1.0), (0.0, 0.0), (-2.0, 1.5)] {
        assert!(fitted.casf(&[a], &[b]).unwrap().abs() < 1e-6);
    }
}

#[test]
fn linear_design_recovers_analytic_casf() {
    let dgp = GaussianLinearDgp::default();
    let data = sample_gaussian(&dgp, 6400, 2);
    let fitted = fit(&data, &gaussian_config(1)).unwrap();
    let est = fitted.casf(&[1.0], &[-1.0]).unwrap();
    assert!((est - dgp.analytic_casf(1.0, -1.0)).abs() < 0.15, "{est}");
}

#[test]
fn unconfounded_diagonal_matches_series_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6400;
    let x: DMatrix<f64> = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-2.0..2.0));
    let y = DVector::from_fn(n, |i, _| 1.0 + x[(i, 0)] - 0.5 * x[(i, 0)].powi(2) + 0.3 * rng.gen_range(-1.0..1.0));
    let z = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
    let v = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
    let data = Dataset::new(y.clone(), x.clone(), z, v).unwrap();
    let fitted = fit(&data, &gaussian_config(2)).unwrap();

    // Ordinary least squares of Y on (1, X, X^2).
    let design = DMatrix::from_fn(n, 3, |i, j| x[(i, 0)].powi(j as i32));
    let coef = (design.tr_mul(&design)).cholesky().unwrap().solve(&design.tr_mul(&y));
    for p in [-1.5, -0.5, 0.0, 0.7, 1.5] {
        let reg = coef[0] + coef[1] * p + coef[2] * p * p;
        let est = fitted.casf(&[p], &[p]).unwrap();
        assert!((est - reg).abs() < 0.05, "x={p}: {est} vs {reg}");
    }
}

#[test]
fn row_permutation_leaves_estimates_unchanged() {
    let data = sample_gaussian(&GaussianLinearDgp::default(), 800, 4);
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let shuffled = data.select_rows(&order);
    for config in [gaussian_config(2), fixed_config(3)] {
        let a = fit(&data, &config).unwrap();
        let b = fit(&shuffled, &config).unwrap();
        assert!((&a.theta_hat - &b.theta_hat).amax() < 1e-10);
        for (x1, x2) in [(1.0, -1.0), (0.3, 0.9)] {
            assert!((a.casf(&[x1], &[x2]).unwrap() - b.casf(&[x1], &[x2]).unwrap()).abs() < 1e-10);
        }
    }
}

#[test]
fn estimates_are_linear_in_the_outcome() {
    let data = sample_gaussian(&GaussianLinearDgp::default(), 600, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let other = DVector::from_fn(data.n(), |_, _| rng.gen_range(-3.0..3.0));
    let (a, b) = (2.5, -0.75);
    let combined = &data.y * a + &other * b;
    let config = fixed_config(2);
    let f_y = fit(&data, &config).unwrap();
    let f_o = fit(&data.with_outcome(other).unwrap(), &config).unwrap();
    let f_c = fit(&data.with_outcome(combined).unwrap(), &config).unwrap();
    for (x1, x2) in [(1.0, -1.0), (-0.5, 0.5), (2.0, 0.0)] {
        let lhs = f_c.casf(&[x1], &[x2]).unwrap();
        let rhs = a * f_y.casf(&[x1], &[x2]).unwrap() + b * f_o.casf(&[x1], &[x2]).unwrap();
        assert!((lhs - rhs).abs() < 1e-8);
    }
}

#[test]
fn normal_equations_hold() {
    for (degree, seed) in [(1, 8), (2, 9), (3, 10)] {
        let data = sample_gaussian(&GaussianLinearDgp::default(), 1000, seed);
        let fitted = fit(&data, &gaussian_config(degree)).unwrap();
        assert!(fitted.normal_residual <= 1e-8, "{}", fitted.normal_residual);
    }
}

#[test]
fn sieve_dimension_at_least_n_needs_positive_lambda0() {
    let data = sample_gaussian(&GaussianLinearDgp::default(), 8, 11);
    let config = EstimatorConfig {
        penalties: Penalties {
            lambda0: Penalty::Fixed(0.0),
            ..Penalties::fixed(1e-2)
        },
        ..gaussian_config(2)
    };
    assert!(matches!(fit(&data, &config), Err(Error::InvalidArgument(_))));
}

#[test]
fn asf_average_is_mean_of_casf_over_sample() {
    let data = sample_gaussian(&GaussianLinearDgp::default(), 300, 12);
    let fitted = fit(&data, &gaussian_config(2)).unwrap();
    let grid = vec![vec![-1.0], vec![0.0], vec![1.3]];
    let fast = asf_average(&fitted, &grid).unwrap();
    for (g, f) in grid.iter().zip(&fast) {
        let brute: f64 = rows(&data.x).iter().map(|xi| fitted.casf(g, xi).unwrap()).sum::<f64>() / data.n() as f64;
        assert!((brute - f).abs() < 1e-10);
    }
}

#[test]
fn asf_average_on_constant_and_linear_designs() {
    let flat = GaussianLinearDgp {
        b1: 0.0,
        b2: 0.0,
        ..Default::default()
    };
    let data = sample_gaussian(&flat, 6400, 13);
    let fitted = fit(&data, &gaussian_config(2)).unwrap();
    let mean = data.y.mean();
    for value in asf_average(&fitted, &[vec![-1.0], vec![0.0], vec![1.0]]).unwrap() {
        assert!((value - mean).abs() < 0.1);
    }

    let data = sample_gaussian(&GaussianLinearDgp::default(), 6400, 14);
    let fitted = fit(&data, &gaussian_config(1)).unwrap();
    let curve = asf_average(&fitted, &[vec![-1.0], vec![1.0]]).unwrap();
    let slope = (curve[1] - curve[0]) / 2.0;
    assert!((slope - 1.0).abs() < 0.1, "{slope}");
}

#[test]
fn effect_table_layout_and_population_values() {
    let model = well_conditioned_model(15, 4);
    let data = sample_discrete(&model, 1.0, 6000, 16).unwrap();
    let fitted = fit(&data, &EstimatorConfig::saturated(1, 1, 1, 1e-10)).unwrap();
    let levels = vec![vec![1.0], vec![2.0], vec![3.0]];
    let table = effect_table(&fitted, &levels, &[0.0]).unwrap();
    assert_eq!(table.values.len(), 3);
    assert!(table.values.iter().all(|r| r.len() == 4));
    assert_eq!(table.groups[0], vec![0.0]);

    let law = EmpiricalTable::from_dataset(&data).unwrap().law;
    for (r, level) in [1usize, 2, 3].iter().enumerate() {
        for c in 0..4 {
            let oracle = law.casf_via_gamma(*level, c).unwrap() - law.casf_via_gamma(0, c).unwrap();
            assert!((table.values[r][c] - oracle).abs() < 1e-6);
        }
    }

    let same = effect_table(&fitted, &[vec![0.0]], &[0.0]).unwrap();
    assert!(same.values[0].iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn scaled_effect_curve_examples() {
    let data = sample_gaussian(&GaussianLinearDgp::default(), 6400, 17);
    let xs: Vec<f64> = data.x.column(0).iter().copied().collect();
    let grid = quantile_grid(&xs, 0.1, 0.9, 100).unwrap();
    assert_eq!(grid.len(), 100);
    assert!(grid.windows(2).all(|w| w[0] < w[1]));

    let fitted = fit(&data, &gaussian_config(1)).unwrap();
    assert!(scaled_effect_curve(&fitted, &grid, 1.0).unwrap().iter().all(|v| *v == 0.0));
    let curve = scaled_effect_curve(&fitted, &grid, 1.1).unwrap();
    for (x, c) in grid.iter().zip(&curve) {
        assert!((c - 0.1 * x).abs() < 0.1);
    }
}

#[test]
fn quantile_grid_endpoints() {
    let values: Vec<f64> = (0..=10).map(f64::from).collect();
    assert_eq!(quantile_grid(&values, 0.1, 0.9, 3).unwrap(), vec![1.0, 5.0, 9.0]);
    assert!(quantile_grid(&[], 0.1, 0.9, 3).is_err());
}

#[test]
fn distributional_extremes() {
    let data = sample_gaussian(&GaussianLinearDgp::default(), 6400, 18);
    let config = gaussian_config(2);
    let lo = data.y.min() - 1.0;
    let hi = data.y.max() + 1.0;
    let below = distributional_casf(&data, &config, lo, &[1.0], &[-1.0]).unwrap();
    let above = distributional_casf(&data, &config, hi, &[1.0], &[-1.0]).unwrap();
    assert!(below.raw.abs() < 0.05);
    assert!((above.raw - 1.0).abs() < 0.05);
    assert!((0.0..=1.0).contains(&below.clamped) && (0.0..=1.0).contains(&above.clamped));
}

#[test]
fn naive_comparator_cases() {
    let config = gaussian_config(1);
    let point = (&[1.0][..], &[-1.0][..]);

    let perfect = GaussianLinearDgp {
        sigma_v: 0.0,
        ..Default::default()
    };
    let data = sample_gaussian(&perfect, 6400, 19);
    let naive = fit_naive(&data, &config).unwrap().casf(point.0, point.1).unwrap();
    let proxy = fit(&data, &config).unwrap().casf(point.0, point.1).unwrap();
    assert!((naive - proxy).abs() < 0.1);

    let noisy = GaussianLinearDgp::default();
    let data = sample_gaussian(&noisy, 6400, 20);
    let naive = fit_naive(&data, &config).unwrap().casf(point.0, point.1).unwrap();
    assert!((naive - noisy.naive_limit(1.0, -1.0)).abs() < 0.1, "{naive}");
    assert!((naive - noisy.analytic_casf(1.0, -1.0)).abs() > 0.2);

    let unconfounded = GaussianLinearDgp {
        b2: 0.0,
        ..Default::default()
    };
    let data = sample_gaussian(&unconfounded, 6400, 21);
    let truth = unconfounded.analytic_casf(1.0, -1.0);
    let naive = fit_naive(&data, &config).unwrap().casf(point.0, point.1).unwrap();
    let proxy = fit(&data, &config).unwrap().casf(point.0, point.1).unwrap();
    assert!((naive - truth).abs() < 0.1 && (proxy - truth).abs() < 0.1);
}

#[test]
fn saturated_chi_rejects_unseen_level() {
    let model = well_conditioned_model(22, 2);
    let data = sample_discrete(&model, 1.0, 500, 23).unwrap();
    let fitted = fit(&data, &EstimatorConfig::saturated(1, 1, 1, 1e-6)).unwrap();
    assert!(matches!(fitted.casf(&[5.0], &[0.0]), Err(Error::UnseenLevel { .. })));
    assert!(matches!(fitted.casf(&[0.0], &[0.5]), Err(Error::UnseenLevel { .. })));
}

#[test]
fn discrete_treatment_switches_chi_to_indicators() {
    let model = well_conditioned_model(24, 3);
    let data = sample_discrete(&model, 1.0, 3000, 25).unwrap();
    let auto = fit(&data, &gaussian_config(2)).unwrap();
    assert!(matches!(auto.casf(&[7.0], &[0.0]), Err(Error::UnseenLevel { .. })));
    let off = EstimatorConfig {
        discrete_threshold: None,
        ..gaussian_config(2)
    };
    assert!(fit(&data, &off).unwrap().casf(&[7.0], &[0.0]).is_ok());
}

#[test]
fn extrapolation_is_flagged_for_power_series() {
    let data = sample_gaussian(&GaussianLinearDgp::default(), 400, 26);
    let fitted = fit(&data, &gaussian_config(2)).unwrap();
    assert!(fitted.extrapolation_warning(&[100.0]).is_some());
    assert!(fitted.extrapolation_warning(&[0.0]).is_none());
    assert!(fitted.casf(&[100.0], &[0.0]).is_ok());
}
