//! Counterfactual summaries built on a fitted estimator, plus the naive
//! perfect-controls comparator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{dot, fit, gcv, Dataset, EstimatorConfig, FittedEstimator, Penalty, Sieve};
use crate::error::{Error, Result};
use crate::ridge::ridge_fit_with;

/// `(1/n) sum_i casf(x, X_i)` for each grid point.
pub fn asf_average(fit: &FittedEstimator, x_grid: &[Vec<f64>]) -> Result<Vec<f64>> {
    x_grid
        .iter()
        .map(|x| {
            fit.check_point(x)?;
            let alpha = fit.sieve().averaged_alpha(x)?;
            Ok(dot(&alpha, &fit.theta_hat))
        })
        .collect()
}

/// Effects of each level against a baseline, by observed treatment group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    /// Counterfactual levels, one per row.
    pub levels: Vec<Vec<f64>>,
    /// Observed groups, one per column: the baseline first, then `levels`.
    pub groups: Vec<Vec<f64>>,
    pub baseline: Vec<f64>,
    /// Row-major `levels.len() x groups.len()`.
    pub values: Vec<Vec<f64>>,
}

/// Entry `(r, c)` is `casf(level_r | group_c) - casf(baseline | group_c)`.
pub fn effect_table(fit: &FittedEstimator, levels: &[Vec<f64>], baseline: &[f64]) -> Result<EffectTable> {
    let mut groups = vec![baseline.to_vec()];
    groups.extend(levels.iter().cloned());
    let base: Vec<f64> = groups
        .iter()
        .map(|g| fit.casf(baseline, g))
        .collect::<Result<_>>()?;
    let values = levels
        .iter()
        .map(|level| {
            groups
                .iter()
                .zip(&base)
                .map(|(g, b)| Ok(fit.casf(level, g)? - b))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(EffectTable {
        levels: levels.to_vec(),
        groups,
        baseline: baseline.to_vec(),
        values,
    })
}

/// `casf(scale * x, x) - casf(x, x)` for scalar treatments.
pub fn scaled_effect_curve(fit: &FittedEstimator, x_grid: &[f64], scale: f64) -> Result<Vec<f64>> {
    if fit.treatment_dim() != 1 {
        return Err(Error::Dimension("scaled effect curves need a scalar treatment".into()));
    }
    x_grid
        .iter()
        .map(|&x| Ok(fit.casf(&[scale * x], &[x])? - fit.casf(&[x], &[x])?))
        .collect()
}

/// `points` evenly spaced values between the `lo` and `hi` sample quantiles
/// (linear interpolation between order statistics).
pub fn quantile_grid(values: &[f64], lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("quantile grid of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::InvalidArgument(format!("bad quantile range [{lo}, {hi}]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < sorted.len() {
            sorted[i] + frac * (sorted[i + 1] - sorted[i])
        } else {
            sorted[i]
        }
    };
    let (a, b) = (q(lo), q(hi));
    Ok(match points {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..points)
            .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionalEstimate {
    pub raw: f64,
    /// `raw` clamped to `[0, 1]`.
    pub clamped: f64,
}

/// Estimated `P(y0(x1, U) <= threshold | X = x2)`, from a refit on the
/// outcome `1{Y <= threshold}`.
pub fn distributional_casf(
    data: &Dataset,
    config: &EstimatorConfig,
    threshold: f64,
    x1: &[f64],
    x2: &[f64],
) -> Result<DistributionalEstimate> {
    let indicator = DVector::from_iterator(
        data.n(),
        data.y.iter().map(|&y| if y <= threshold { 1.0 } else { 0.0 }),
    );
    let fitted = fit(&data.with_outcome(indicator)?, config)?;
    let raw = fitted.casf(x1, x2)?;
    Ok(DistributionalEstimate {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    })
}

/// Comparator that treats `V` as perfect controls: series ridge of `Y` on
/// `rho(V) ⊗ chi(X)`, averaged over `V | X = x2` by the same projection the
/// proxy estimator uses.
#[derive(Debug, Clone)]
pub struct NaiveEstimator {
    pub coefficients: DVector<f64>,
    pub lambda: f64,
    sieve: Sieve,
}

impl NaiveEstimator {
    pub fn casf(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        let alpha = self.sieve.alpha(x1, x2)?;
        Ok(dot(&alpha, &self.coefficients))
    }
}

/// Fits the comparator. Its outcome regression uses `lambda1` (or GCV when
/// `lambda1` is `auto`).
pub fn fit_naive(data: &Dataset, config: &EstimatorConfig) -> Result<NaiveEstimator> {
    config.validate_for(data)?;
    let (sieve, designs, _) = Sieve::fit(data, config)?;
    let n = data.n();
    let design: DMatrix<f64> = sieve.phi_block(&designs.rho, &designs.chi, 0, n);
    let y = DMatrix::from_column_slice(n, 1, data.y.as_slice());
    let mask = sieve.phi_mask(config.penalize_intercept);
    let lambda = match config.penalties.lambda1 {
        Penalty::Fixed(v) => v,
        Penalty::Auto => gcv::select_lambda(&design, &y, &mask, config.singular_policy)?,
    };
    let ridge = ridge_fit_with(&design, &y, lambda, &mask, config.singular_policy)?;
    Ok(NaiveEstimator {
        coefficients: DVector::from_column_slice(ridge.coefficients.as_slice()),
        lambda,
        sieve,
    })
}

pub fn naive_control_estimate(data: &Dataset, config: &EstimatorConfig, x1: &[f64], x2: &[f64]) -> Result<f64> {
    fit_naive(data, config)?.casf(x1, x2)
}
