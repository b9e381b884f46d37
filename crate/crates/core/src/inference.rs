//! Pairs bootstrap standard errors and sup-t uniform bands.
//!
//! Every draw resamples whole units with replacement and refits the entire
//! pipeline, standardizers included. Draw `b` uses RNG stream `(seed, b)`, so
//! the first `B` draws are shared by any run with more draws and the same
//! seed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, Dataset, EstimatorConfig};
use crate::exec::{map_indexed, stream_rng, Execution};

/// Attached to every band report.
pub const BAND_CAVEAT: &str = "bootstrap sup-t bands carry no proven asymptotic validity for this estimator";

/// Largest tolerated share of failed draws.
pub const MAX_FAILURE_SHARE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(skip, default)]
    pub execution: Execution,
}

fn default_draws() -> usize {
    1000
}

fn default_level() -> f64 {
    0.95
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            seed: 0,
            level: default_level(),
            execution: Execution::default(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws < 2 {
            return Err(Error::InvalidArgument(format!("bootstrap needs at least 2 draws, got {}", self.draws)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!("level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }
}

/// Point values plus the successful bootstrap replicates of a functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraws {
    pub estimate: Vec<f64>,
    /// One row per successful draw, in draw order.
    pub replicates: Vec<Vec<f64>>,
    pub failed: usize,
    pub requested: usize,
}

/// Row groups resampled together: one per distinct unit id in order of
/// first appearance, or one per row without ids.
fn clusters(data: &Dataset) -> Vec<Vec<usize>> {
    match &data.unit_ids {
        None => (0..data.n()).map(|i| vec![i]).collect(),
        Some(ids) => {
            let mut index = std::collections::HashMap::new();
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for (i, id) in ids.iter().enumerate() {
                let g = *index.entry(id.as_str()).or_insert_with(|| {
                    groups.push(Vec::new());
                    groups.len() - 1
                });
                groups[g].push(i);
            }
            groups
        }
    }
}

/// Runs `functional` on the data and on `config.draws` pairs-bootstrap
/// resamples. Draws whose refit fails are dropped and counted; more than
/// [`MAX_FAILURE_SHARE`] failures is an error.
pub fn bootstrap<F>(data: &Dataset, config: &BootstrapConfig, functional: F) -> Result<BootstrapDraws>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    config.validate()?;
    let estimate = functional(data)?;
    let groups = clusters(data);
    let outcomes = map_indexed(config.execution, config.draws, |b| {
        let mut rng = stream_rng(config.seed, b as u64);
        let mut rows = Vec::with_capacity(data.n());
        for _ in 0..groups.len() {
            rows.extend_from_slice(&groups[rng.gen_range(0..groups.len())]);
        }
        functional(&data.select_rows(&rows))
    });
    let mut replicates = Vec::with_capacity(config.draws);
    let mut failed = 0;
    for outcome in outcomes {
        match outcome {
            Ok(values) if values.len() == estimate.len() && values.iter().all(|v| v.is_finite()) => {
                replicates.push(values)
            }
            _ => failed += 1,
        }
    }
    if failed as f64 > MAX_FAILURE_SHARE * config.draws as f64 || replicates.len() < 2 {
        return Err(Error::BootstrapFailures {
            failed,
            draws: config.draws,
        });
    }
    Ok(BootstrapDraws {
        estimate,
        replicates,
        failed,
        requested: config.draws,
    })
}

impl BootstrapDraws {
    /// Standard deviation of each coordinate across replicates (divisor
    /// `B - 1`).
    pub fn standard_errors(&self) -> Vec<f64> {
        let b = self.replicates.len() as f64;
        (0..self.estimate.len())
            .map(|g| {
                let mean = self.replicates.iter().map(|r| r[g]).sum::<f64>() / b;
                let ss: f64 = self.replicates.iter().map(|r| (r[g] - mean).powi(2)).sum();
                (ss / (b - 1.0)).sqrt()
            })
            .collect()
    }
}

fn casf_functional<'a>(
    config: &'a EstimatorConfig,
    targets: &'a [(Vec<f64>, Vec<f64>)],
) -> impl Fn(&Dataset) -> Result<Vec<f64>> + Sync + 'a {
    move |d: &Dataset| {
        let fitted = fit(d, config)?;
        targets.iter().map(|(a, b)| fitted.casf(a, b)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    pub estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub failed_draws: usize,
    pub draws: usize,
}

pub fn bootstrap_se(
    data: &Dataset,
    est_config: &EstimatorConfig,
    targets: &[(Vec<f64>, Vec<f64>)],
    boot: &BootstrapConfig,
) -> Result<StandardErrors> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("bootstrap needs at least one target".into()));
    }
    let draws = bootstrap(data, boot, casf_functional(est_config, targets))?;
    Ok(StandardErrors {
        standard_errors: draws.standard_errors(),
        estimates: draws.estimate,
        failed_draws: draws.failed,
        draws: draws.requested,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBands {
    pub estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub critical_value: f64,
    pub level: f64,
    pub failed_draws: usize,
    pub draws: usize,
    pub caveat: String,
}

/// Inverse-CDF quantile: the `ceil(level * m)`-th smallest value.
fn upper_quantile(values: &mut [f64], level: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((level * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

/// Sup-t bands from bootstrap replicates. Points with zero standard error
/// are left out of the maximum and get degenerate bands.
pub fn sup_t_bands(draws: &BootstrapDraws, level: f64) -> UniformBands {
    let se = draws.standard_errors();
    let live: Vec<usize> = (0..se.len()).filter(|&g| se[g] > 0.0).collect();
    let critical_value = if live.is_empty() {
        0.0
    } else {
        let mut maxima: Vec<f64> = draws
            .replicates
            .iter()
            .map(|r| {
                live.iter()
                    .map(|&g| (r[g] - draws.estimate[g]).abs() / se[g])
                    .fold(0.0f64, f64::max)
            })
            .collect();
        upper_quantile(&mut maxima, level)
    };
    let lo = draws.estimate.iter().zip(&se).map(|(e, s)| e - critical_value * s).collect();
    let hi = draws.estimate.iter().zip(&se).map(|(e, s)| e + critical_value * s).collect();
    UniformBands {
        estimates: draws.estimate.clone(),
        standard_errors: se,
        lo,
        hi,
        critical_value,
        level,
        failed_draws: draws.failed,
        draws: draws.requested,
        caveat: BAND_CAVEAT.to_string(),
    }
}

pub fn uniform_bands(
    data: &Dataset,
    est_config: &EstimatorConfig,
    grid: &[(Vec<f64>, Vec<f64>)],
    boot: &BootstrapConfig,
) -> Result<UniformBands> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("bands need at least one grid point".into()));
    }
    let draws = bootstrap(data, boot, casf_functional(est_config, grid))?;
    Ok(sup_t_bands(&draws, boot.level))
}
