//! Synthetic designs with known CASF, and a replication harness.

use nalgebra::{DMatrix, DVector};
use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, fit_naive, Dataset, EstimatorConfig};
use crate::exec::{map_indexed, stream_rng, Execution};
use crate::oracle::DiscreteModel;

/// `W* ~ N(0, 1)`, `X = alpha W* + e_x`, `V = W* + sigma_v e_v`,
/// `Z = W* + sigma_z e_z`, `Y = b0 + b1 X + b2 W* + sigma_y e_y`, all
/// noises independent standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianLinearDgp {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub alpha: f64,
    pub sigma_v: f64,
    pub sigma_z: f64,
    pub sigma_y: f64,
}

impl Default for GaussianLinearDgp {
    fn default() -> Self {
        Self {
            b0: 1.0,
            b1: 1.0,
            b2: 1.0,
            alpha: 1.0,
            sigma_v: 0.5,
            sigma_z: 0.5,
            sigma_y: 1.0,
        }
    }
}

impl GaussianLinearDgp {
    /// `b0 + b1 x1 + b2 E[W* | X = x2]`.
    pub fn analytic_casf(&self, x1: f64, x2: f64) -> f64 {
        self.b0 + self.b1 * x1 + self.b2 * self.alpha / (self.alpha * self.alpha + 1.0) * x2
    }

    /// Probability limit of the perfect-controls comparator:
    /// `E[ E[Y | V, X = x1] | X = x2 ]`, with `V` drawn from its law given `x2`.
    pub fn naive_limit(&self, x1: f64, x2: f64) -> f64 {
        let a2 = self.alpha * self.alpha;
        let mean_v = self.alpha / (a2 + 1.0) * x2;
        let w_given_vx = if self.sigma_v == 0.0 {
            mean_v
        } else {
            let tau = 1.0 / (self.sigma_v * self.sigma_v);
            (self.alpha * x1 + tau * mean_v) / (1.0 + a2 + tau)
        };
        self.b0 + self.b1 * x1 + self.b2 * w_given_vx
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R, n: usize) -> Dataset {
        let mut y = DVector::zeros(n);
        let mut x = DMatrix::zeros(n, 1);
        let mut z = DMatrix::zeros(n, 1);
        let mut v = DMatrix::zeros(n, 1);
        for i in 0..n {
            let w: f64 = rng.sample(StandardNormal);
            let ex: f64 = rng.sample(StandardNormal);
            let ev: f64 = rng.sample(StandardNormal);
            let ez: f64 = rng.sample(StandardNormal);
            let ey: f64 = rng.sample(StandardNormal);
            let xi = self.alpha * w + ex;
            x[(i, 0)] = xi;
            v[(i, 0)] = w + self.sigma_v * ev;
            z[(i, 0)] = w + self.sigma_z * ez;
            y[i] = self.b0 + self.b1 * xi + self.b2 * w + self.sigma_y * ey;
        }
        Dataset::new(y, x, z, v).expect("simulated data are finite")
    }
}

pub fn sample_gaussian(dgp: &GaussianLinearDgp, n: usize, seed: u64) -> Dataset {
    dgp.sample_with(&mut stream_rng(seed, 0), n)
}

pub fn analytic_casf(dgp: &GaussianLinearDgp, x1: f64, x2: f64) -> f64 {
    dgp.analytic_casf(x1, x2)
}

/// Draws from a discrete model with `Y = mu(X, W*) + noise_sd * e`. Levels
/// are coded `0, 1, ..` as floats.
pub fn sample_discrete_with<R: Rng>(model: &DiscreteModel, noise_sd: f64, rng: &mut R, n: usize) -> Result<Dataset> {
    model.validate()?;
    let (nx, nz) = (model.nx(), model.nz());
    let w_dist = WeightedIndex::new(&model.p_w).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let xz_dists = model
        .p_xz_given_w
        .iter()
        .map(|t| WeightedIndex::new(t.iter().flatten()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let v_dists = model
        .p_v_given_w
        .iter()
        .map(WeightedIndex::new)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut y = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, 1);
    let mut z = DMatrix::zeros(n, 1);
    let mut v = DMatrix::zeros(n, 1);
    for i in 0..n {
        let w = w_dist.sample(rng);
        let cell = xz_dists[w].sample(rng);
        let (xi, zi) = (cell / nz, cell % nz);
        debug_assert!(xi < nx);
        let vi = v_dists[w].sample(rng);
        let e: f64 = rng.sample(StandardNormal);
        x[(i, 0)] = xi as f64;
        z[(i, 0)] = zi as f64;
        v[(i, 0)] = vi as f64;
        y[i] = model.mu[xi][w] + noise_sd * e;
    }
    Dataset::new(y, x, z, v)
}

pub fn sample_discrete(model: &DiscreteModel, noise_sd: f64, n: usize, seed: u64) -> Result<Dataset> {
    sample_discrete_with(model, noise_sd, &mut stream_rng(seed, 0), n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scenario {
    Gaussian(GaussianLinearDgp),
    Discrete { model: DiscreteModel, noise_sd: f64 },
}

impl Scenario {
    fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Result<Dataset> {
        match self {
            Scenario::Gaussian(dgp) => Ok(dgp.sample_with(rng, n)),
            Scenario::Discrete { model, noise_sd } => sample_discrete_with(model, *noise_sd, rng, n),
        }
    }

    pub fn truth(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        match self {
            Scenario::Gaussian(dgp) => match (x1, x2) {
                ([a], [b]) => Ok(dgp.analytic_casf(*a, *b)),
                _ => Err(Error::Dimension("the Gaussian design has a scalar treatment".into())),
            },
            Scenario::Discrete { model, .. } => {
                let level = |p: &[f64]| -> Result<usize> {
                    match p {
                        [l] if *l >= 0.0 && l.fract() == 0.0 && (*l as usize) < model.nx() => Ok(*l as usize),
                        _ => Err(Error::InvalidArgument(format!("{p:?} is not a treatment level"))),
                    }
                };
                Ok(model.true_casf(level(x1)?, level(x2)?))
            }
        }
    }

    fn naive_limit(&self, x1: &[f64], x2: &[f64]) -> Option<f64> {
        match (self, x1, x2) {
            (Scenario::Gaussian(dgp), [a], [b]) => Some(dgp.naive_limit(*a, *b)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub estimator: EstimatorConfig,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    /// `(x1, x2)` evaluation points.
    pub targets: Vec<(Vec<f64>, Vec<f64>)>,
    #[serde(default = "yes")]
    pub naive: bool,
    #[serde(skip, default)]
    pub execution: Execution,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub proxy: Option<Vec<f64>>,
    pub naive: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeSummary {
    pub n: usize,
    pub failures: usize,
    pub proxy_median_abs_error: Vec<f64>,
    pub proxy_mean_abs_error: Vec<f64>,
    pub naive_median_abs_error: Option<Vec<f64>>,
    pub naive_mean_abs_error: Option<Vec<f64>>,
    pub reps: Vec<RepOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub scenario: Scenario,
    pub config: MonteCarloConfig,
    pub seed: u64,
    pub truth: Vec<f64>,
    /// Analytic limit of the naive comparator, when available.
    pub naive_limit: Option<Vec<f64>>,
    pub per_n: Vec<SampleSizeSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

fn mean_sorted(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn one_rep(scenario: &Scenario, config: &MonteCarloConfig, n_index: usize, n: usize, rep: usize) -> RepOutcome {
    let mut rng = stream_rng(config.seed, ((n_index as u64) << 32) | rep as u64);
    let mut run = || -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let data = scenario.sample(&mut rng, n)?;
        let fitted = fit(&data, &config.estimator)?;
        let proxy = config
            .targets
            .iter()
            .map(|(a, b)| fitted.casf(a, b))
            .collect::<Result<Vec<_>>>()?;
        let naive = if config.naive {
            let nf = fit_naive(&data, &config.estimator)?;
            Some(
                config
                    .targets
                    .iter()
                    .map(|(a, b)| nf.casf(a, b))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok((proxy, naive))
    };
    match run() {
        Ok((proxy, naive)) => RepOutcome {
            rep,
            proxy: Some(proxy),
            naive,
            error: None,
        },
        Err(e) => RepOutcome {
            rep,
            proxy: None,
            naive: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs `reps` independent fits at every sample size. Replication `r` at the
/// `j`-th sample size uses RNG stream `(seed, j << 32 | r)`, so results do
/// not depend on the execution strategy.
pub fn monte_carlo(scenario: &Scenario, config: &MonteCarloConfig) -> Result<MonteCarloReport> {
    if config.reps == 0 || config.n_list.is_empty() || config.targets.is_empty() {
        return Err(Error::InvalidArgument("monte carlo needs reps >= 1, sample sizes and targets".into()));
    }
    let truth = config
        .targets
        .iter()
        .map(|(a, b)| scenario.truth(a, b))
        .collect::<Result<Vec<_>>>()?;
    let naive_limit: Option<Vec<f64>> = config
        .targets
        .iter()
        .map(|(a, b)| scenario.naive_limit(a, b))
        .collect();

    let mut per_n = Vec::with_capacity(config.n_list.len());
    for (j, &n) in config.n_list.iter().enumerate() {
        let reps = map_indexed(config.execution, config.reps, |r| one_rep(scenario, config, j, n, r));
        let ok: Vec<&RepOutcome> = reps.iter().filter(|r| r.error.is_none()).collect();
        let summarize = |pick: &dyn Fn(&RepOutcome) -> Option<&Vec<f64>>| -> Option<(Vec<f64>, Vec<f64>)> {
            let rows: Vec<&Vec<f64>> = ok.iter().filter_map(|r| pick(r)).collect();
            if rows.is_empty() {
                return None;
            }
            let errs: Vec<Vec<f64>> = (0..truth.len())
                .map(|t| rows.iter().map(|row| (row[t] - truth[t]).abs()).collect())
                .collect();
            Some((
                errs.iter().map(|e| median(e)).collect(),
                errs.iter().map(|e| mean_sorted(e)).collect(),
            ))
        };
        let (proxy_median, proxy_mean) =
            summarize(&|r| r.proxy.as_ref()).unwrap_or_else(|| (vec![f64::NAN; truth.len()], vec![f64::NAN; truth.len()]));
        let naive = summarize(&|r| r.naive.as_ref());
        per_n.push(SampleSizeSummary {
            n,
            failures: reps.len() - ok.len(),
            proxy_median_abs_error: proxy_median,
            proxy_mean_abs_error: proxy_mean,
            naive_median_abs_error: naive.as_ref().map(|(m, _)| m.clone()),
            naive_mean_abs_error: naive.map(|(_, m)| m),
            reps,
        });
    }
    Ok(MonteCarloReport {
        scenario: scenario.clone(),
        config: config.clone(),
        seed: config.seed,
        truth,
        naive_limit,
        per_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::random_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_proxies_equal_latent() {
        let dgp = GaussianLinearDgp {
            sigma_v: 0.0,
            sigma_z: 0.0,
            ..Default::default()
        };
        let d = sample_gaussian(&dgp, 200, 1);
        assert_eq!(d.v, d.z);
    }

    #[test]
    fn pure_noise_outcome_centers_on_intercept() {
        let dgp = GaussianLinearDgp {
            b0: 2.0,
            b1: 0.0,
            b2: 0.0,
            sigma_y: 1.5,
            ..Default::default()
        };
        let n = 10_000;
        let d = sample_gaussian(&dgp, n, 2);
        let mean = d.y.mean();
        assert!((mean - 2.0).abs() < 4.0 * 1.5 / (n as f64).sqrt());
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let dgp = GaussianLinearDgp::default();
        assert_eq!(sample_gaussian(&dgp, 50, 9), sample_gaussian(&dgp, 50, 9));
        assert_ne!(sample_gaussian(&dgp, 50, 9), sample_gaussian(&dgp, 50, 10));
    }

    #[test]
    fn analytic_casf_examples() {
        let no_conf = GaussianLinearDgp {
            b2: 0.0,
            ..Default::default()
        };
        assert_eq!(no_conf.analytic_casf(2.0, 5.0), no_conf.analytic_casf(2.0, -5.0));
        let no_info = GaussianLinearDgp {
            alpha: 0.0,
            ..Default::default()
        };
        assert_eq!(no_info.analytic_casf(2.0, 7.0), 1.0 + 2.0);
        assert!((GaussianLinearDgp::default().analytic_casf(1.0, -1.0) - 1.5).abs() < 1e-15);
    }

    // Trapezoid quadrature over w of E[y0(x1, U) | X = x2] using only the
    // structural densities.
    fn quadrature_casf(dgp: &GaussianLinearDgp, x1: f64, x2: f64) -> f64 {
        let (lo, hi, steps) = (-12.0, 12.0, 48_000);
        let h = (hi - lo) / steps as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..=steps {
            let w = lo + h * i as f64;
            let weight = if i == 0 || i == steps { 0.5 } else { 1.0 };
            let dens = (-0.5 * w * w).exp() * (-0.5 * (x2 - dgp.alpha * w).powi(2)).exp();
            num += weight * dens * (dgp.b0 + dgp.b1 * x1 + dgp.b2 * w);
            den += weight * dens;
        }
        num / den
    }

    #[test]
    fn analytic_casf_matches_quadrature() {
        for dgp in [
            GaussianLinearDgp::default(),
            GaussianLinearDgp {
                b0: -0.5,
                b1: 2.0,
                b2: -1.5,
                alpha: 0.7,
                ..Default::default()
            },
        ] {
            for (x1, x2) in [(1.0, -1.0), (0.0, 0.5), (-1.0, 2.0)] {
                assert!((dgp.analytic_casf(x1, x2) - quadrature_casf(&dgp, x1, x2)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn naive_limit_examples() {
        let dgp = GaussianLinearDgp::default();
        // E[W | V, X=1] averaged over V | X=-1: (1 + 4 * (-0.5)) / 6.
        assert!((dgp.naive_limit(1.0, -1.0) - (2.0 - 1.0 / 6.0)).abs() < 1e-14);
        let perfect = GaussianLinearDgp {
            sigma_v: 0.0,
            ..dgp
        };
        assert_eq!(perfect.naive_limit(1.0, -1.0), perfect.analytic_casf(1.0, -1.0));
    }

    #[test]
    fn discrete_sampler_without_noise_returns_structural_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 2, 2, 3, 3, 0.02);
        let d = sample_discrete(&m, 0.0, 500, 4).unwrap();
        // Each y must be one of mu(x, .) for its x.
        for i in 0..d.n() {
            let x = d.x[(i, 0)] as usize;
            assert!(m.mu[x].iter().any(|&mu| mu == d.y[i]));
        }
        assert_eq!(d, sample_discrete(&m, 0.0, 500, 4).unwrap());
    }

    #[test]
    fn discrete_sampler_matches_joint_pmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(&mut rng, 3, 2, 4, 4, 0.02);
        let n = 200_000;
        let d = sample_discrete(&m, 1.0, n, 6).unwrap();
        let law = m.observables();
        let mut counts = vec![0.0; law.p_xzv.len()];
        for i in 0..n {
            let (x, z, v) = (d.x[(i, 0)] as usize, d.z[(i, 0)] as usize, d.v[(i, 0)] as usize);
            counts[(x * law.nz + z) * law.nv + v] += 1.0 / n as f64;
        }
        let sup = counts
            .iter()
            .zip(&law.p_xzv)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(sup < 5.0 / (n as f64).sqrt());
    }
}
