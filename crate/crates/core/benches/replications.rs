use casf_core::estimator::EstimatorConfig;
use casf_core::exec::Execution;
use casf_core::inference::{bootstrap_se, BootstrapConfig};
use casf_core::simulate::{monte_carlo, sample_gaussian, GaussianLinearDgp, MonteCarloConfig, Scenario};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const STRATEGIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn monte_carlo_reps(c: &mut Criterion) {
    let scenario = Scenario::Gaussian(GaussianLinearDgp::default());
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for (name, execution) in STRATEGIES {
        let config = MonteCarloConfig {
            estimator: EstimatorConfig::power_series(1, 1, 1, 2),
            n_list: vec![1600],
            reps: 64,
            seed: 1,
            targets: vec![(vec![1.0], vec![-1.0])],
            naive: true,
            execution,
        };
        group.bench_with_input(BenchmarkId::new(name, 64), &config, |b, cfg| {
            b.iter(|| monte_carlo(&scenario, cfg).unwrap())
        });
    }
    group.finish();
}

fn bootstrap_draws(c: &mut Criterion) {
    let data = sample_gaussian(&GaussianLinearDgp::default(), 1600, 2);
    let est = EstimatorConfig::power_series(1, 1, 1, 2);
    let targets = vec![(vec![1.0], vec![-1.0]), (vec![0.0], vec![0.0])];
    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    for (name, execution) in STRATEGIES {
        let boot = BootstrapConfig {
            draws: 200,
            seed: 3,
            level: 0.95,
            execution,
        };
        group.bench_with_input(BenchmarkId::new(name, 200), &boot, |b, cfg| {
            b.iter(|| bootstrap_se(&data, &est, &targets, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo_reps, bootstrap_draws);
criterion_main!(benches);
