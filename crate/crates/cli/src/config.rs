//! Run configuration. One file drives every subcommand; each subcommand
//! reads only the sections it needs. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use casf_core::basis::BasisSpec;
use casf_core::estimator::{EstimatorConfig, Penalties, Penalty};
use casf_core::exec::Execution;
use casf_core::ridge::SingularPolicy;
use casf_core::simulate::GaussianLinearDgp;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Single source of randomness for bootstrap, simulation and oracle runs.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effects: Option<EffectsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panel: Option<PanelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_suite: Option<SuiteSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<BandsSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    /// Column name to role: `y`, `x:j`, `z:j`, `v:j` (1-based), `id`, `period`.
    #[serde(default)]
    pub roles: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisChoice {
    #[default]
    PowerSeries,
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub basis: BasisChoice,
    /// Common total degree; the per-design keys override it.
    pub degree: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_degree: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi_degree: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi_degree: Option<usize>,
    pub standardize: bool,
    pub lambda0: Penalty,
    pub lambda1: Penalty,
    pub lambda2: Penalty,
    pub lambda3: Penalty,
    pub penalize_intercept: bool,
    /// Support size at or below which a treatment column counts as discrete.
    /// `0` disables detection.
    pub discrete_threshold: usize,
    pub singular_policy: SingularPolicy,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            basis: BasisChoice::PowerSeries,
            degree: 2,
            rho_degree: None,
            chi_degree: None,
            psi_degree: None,
            standardize: true,
            lambda0: Penalty::Auto,
            lambda1: Penalty::Auto,
            lambda2: Penalty::Auto,
            lambda3: Penalty::Auto,
            penalize_intercept: false,
            discrete_threshold: 10,
            singular_policy: SingularPolicy::Error,
        }
    }
}

impl EstimatorSection {
    pub fn build(&self, dx: usize, dz: usize, dv: usize) -> EstimatorConfig {
        let series = |dim: usize, degree: Option<usize>| BasisSpec {
            standardize: self.standardize,
            ..BasisSpec::power_series(dim, degree.unwrap_or(self.degree))
        };
        let (rho, chi, psi) = match self.basis {
            BasisChoice::PowerSeries => (
                series(dv, self.rho_degree),
                series(dx, self.chi_degree),
                series(dx + dz, self.psi_degree),
            ),
            BasisChoice::Saturated => (
                BasisSpec::indicator(dv),
                BasisSpec::indicator(dx),
                BasisSpec::indicator(dx + dz),
            ),
        };
        EstimatorConfig {
            rho,
            chi,
            psi,
            penalties: Penalties {
                lambda0: self.lambda0,
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                lambda3: self.lambda3,
            },
            penalize_intercept: self.penalize_intercept,
            discrete_threshold: (self.discrete_threshold > 0).then_some(self.discrete_threshold),
            singular_policy: self.singular_policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub draws: usize,
    pub level: f64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            draws: 1000,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectsSection {
    pub levels: Vec<Vec<f64>>,
    pub baseline: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSection {
    /// 1-based index into the sorted periods; the last period when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_period: Option<usize>,
    pub with_outcomes: bool,
    /// Latent dimension to test against the order condition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim_latent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscreteSection {
    pub nw: usize,
    pub nx: usize,
    pub nz: usize,
    pub nv: usize,
    pub floor: f64,
    pub noise_sd: f64,
}

impl Default for DiscreteSection {
    fn default() -> Self {
        Self {
            nw: 2,
            nx: 2,
            nz: 3,
            nv: 3,
            floor: 0.05,
            noise_sd: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Gaussian design parameters; ignored when `discrete` is given.
    pub gaussian: GaussianLinearDgp,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discrete: Option<DiscreteSection>,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub naive: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            gaussian: GaussianLinearDgp::default(),
            discrete: None,
            n_list: vec![400, 1600, 6400],
            reps: 100,
            naive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSection {
    pub models: usize,
    pub probes: usize,
    pub floor: f64,
}

impl Default for SuiteSection {
    fn default() -> Self {
        Self {
            models: 100,
            probes: 20,
            floor: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandFunctional {
    /// `casf(x | x)`.
    #[default]
    Diagonal,
    /// `casf(x | x2)` for the configured `x2`.
    FixedX2,
    /// `casf(scale * x | x) - casf(x | x)`.
    ScaledEffect,
    /// `(1/n) sum_i casf(x | X_i)`.
    Asf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsSection {
    pub functional: BandFunctional,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x2: Option<f64>,
    pub scale: f64,
    /// Explicit grid; otherwise evenly spaced between two sample quantiles.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub points: usize,
    pub lower_quantile: f64,
    pub upper_quantile: f64,
}

impl Default for BandsSection {
    fn default() -> Self {
        Self {
            functional: BandFunctional::Diagonal,
            x2: None,
            scale: 1.1,
            grid: None,
            points: 100,
            lower_quantile: 0.1,
            upper_quantile: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// JSON report path; stdout when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    /// Plot-data CSV path for `bands`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

impl RunConfig {
    /// Reads TOML, or JSON when the file name ends in `.json` (for example a
    /// config echoed by an earlier report).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, CliError> {
        if json {
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))
        } else {
            toml::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if let Some(b) = &self.bootstrap {
            if b.draws < 2 {
                return usage(format!("bootstrap.draws must be at least 2, got {}", b.draws));
            }
            if !(b.level > 0.0 && b.level < 1.0) {
                return usage(format!("bootstrap.level must lie in (0, 1), got {}", b.level));
            }
        }
        for (name, p) in [
            ("lambda0", self.estimator.lambda0),
            ("lambda1", self.estimator.lambda1),
            ("lambda2", self.estimator.lambda2),
            ("lambda3", self.estimator.lambda3),
        ] {
            if let Penalty::Fixed(v) = p {
                if !(v >= 0.0 && v.is_finite()) {
                    return usage(format!("estimator.{name} must be a nonnegative number or \"auto\""));
                }
            }
        }
        if self.estimator.basis == BasisChoice::PowerSeries && self.estimator.degree == 0 {
            return usage("estimator.degree must be at least 1".into());
        }
        if let Some(b) = &self.bands {
            if !(0.0..=1.0).contains(&b.lower_quantile)
                || !(0.0..=1.0).contains(&b.upper_quantile)
                || b.lower_quantile > b.upper_quantile
            {
                return usage("bands quantiles must satisfy 0 <= lower <= upper <= 1".into());
            }
            if b.functional == BandFunctional::FixedX2 && b.x2.is_none() {
                return usage("bands.functional = \"fixed_x2\" needs bands.x2".into());
            }
            if b.grid.as_ref().map_or(b.points == 0, |g| g.is_empty()) {
                return usage("bands grid is empty".into());
            }
        }
        if let Some(s) = &self.simulate {
            if s.reps == 0 || s.n_list.is_empty() {
                return usage("simulate needs reps >= 1 and a nonempty n_list".into());
            }
        }
        Ok(())
    }

    pub fn targets(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.targets.iter().map(|t| (t.x1.clone(), t.x2.clone())).collect()
    }
}
