//! Two-stage penalized sieve minimum-distance estimator of the conditional
//! average structural function `y(x1 | x2) = E[y0(x1, U) | X = x2]`.
//!
//! First stage: three series ridge regressions
//! - `g_i`: `Y` on `psi(X, Z)` with penalty `lambda1`,
//! - `B`: the columns of `rho(V)` on `psi(X, Z)` with `lambda2`,
//! - `A`: the columns of `rho(V)` on `chi(X)` with `lambda3`.
//!
//! Second stage: with `pi_i = (psi_i' B) ⊗ chi_i`, `theta` minimizes
//! `(1/n) sum (g_i - pi_i' theta)^2 + lambda0 |theta|^2`. The estimate is
//! `alpha(x1, x2)' theta` where `alpha(x1, x2) = (chi(x2)' A) ⊗ chi(x1)`.
//!
//! Each design is standardized separately when its spec asks for it. The
//! Kronecker design `rho ⊗ chi` gets its own standardizer when both factors
//! are standardized. Outcomes are never rescaled, so estimates are in units of
//! `Y`.

mod functionals;
pub mod gcv;

pub use functionals::{
    asf_average, distributional_casf, effect_table, fit_naive, naive_control_estimate,
    quantile_grid, scaled_effect_curve, DistributionalEstimate, EffectTable, NaiveEstimator,
};

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{kron_vec, Basis, BasisKind, BasisSpec, Standardizer};
use crate::error::{Error, Result};
use crate::ridge::{ridge_fit_with, solve_penalized, RidgeFit, SingularPolicy};

/// Rows of the Kronecker design materialized at a time.
const CHUNK_ROWS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub unit_ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        for (name, rows) in [("x", x.nrows()), ("z", z.nrows()), ("v", v.nrows())] {
            if rows != n {
                return Err(Error::Dimension(format!("{name} has {rows} rows, y has {n}")));
            }
        }
        for (name, ok) in [
            ("y", y.iter().all(|v| v.is_finite())),
            ("x", x.iter().all(|v| v.is_finite())),
            ("z", z.iter().all(|v| v.is_finite())),
            ("v", v.iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(Self {
            y,
            x,
            z,
            v,
            unit_ids: None,
        })
    }

    pub fn with_unit_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::Dimension(format!("{} unit ids for {} rows", ids.len(), self.n())));
        }
        self.unit_ids = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dx(&self) -> usize {
        self.x.ncols()
    }

    /// `[X | Z]`, the input of `psi`.
    pub fn xz(&self) -> DMatrix<f64> {
        let (dx, dz) = (self.x.ncols(), self.z.ncols());
        DMatrix::from_fn(self.n(), dx + dz, |i, j| {
            if j < dx {
                self.x[(i, j)]
            } else {
                self.z[(i, j - dx)]
            }
        })
    }

    /// Rows `rows[0], rows[1], ..` in that order (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)]);
        Dataset {
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r])),
            x: pick(&self.x),
            z: pick(&self.z),
            v: pick(&self.v),
            unit_ids: self
                .unit_ids
                .as_ref()
                .map(|ids| rows.iter().map(|&r| ids[r].clone()).collect()),
        }
    }

    pub fn with_outcome(&self, y: DVector<f64>) -> Result<Dataset> {
        let mut out = Dataset::new(y, self.x.clone(), self.z.clone(), self.v.clone())?;
        out.unit_ids = self.unit_ids.clone();
        Ok(out)
    }
}

/// A penalty value, or `auto` for the data-driven default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PenaltyRepr", into = "PenaltyRepr")]
pub enum Penalty {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PenaltyRepr {
    Value(f64),
    Word(String),
}

impl TryFrom<PenaltyRepr> for Penalty {
    type Error = String;

    fn try_from(r: PenaltyRepr) -> std::result::Result<Self, String> {
        match r {
            PenaltyRepr::Value(v) if v >= 0.0 && v.is_finite() => Ok(Penalty::Fixed(v)),
            PenaltyRepr::Value(v) => Err(format!("penalty must be finite and >= 0, got {v}")),
            PenaltyRepr::Word(w) if w == "auto" => Ok(Penalty::Auto),
            PenaltyRepr::Word(w) => Err(format!("penalty must be a number or \"auto\", got {w:?}")),
        }
    }
}

impl From<Penalty> for PenaltyRepr {
    fn from(p: Penalty) -> Self {
        match p {
            Penalty::Auto => PenaltyRepr::Word("auto".into()),
            Penalty::Fixed(v) => PenaltyRepr::Value(v),
        }
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Penalty::Auto => write!(f, "auto"),
            Penalty::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyRule {
    Fixed,
    /// GCV for `lambda1..lambda3`, `lambda0 = trace(Sigma) / dim * n^-1/2`.
    GcvFirstStagesPlusScaledLambda0,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub lambda0: Penalty,
    pub lambda1: Penalty,
    pub lambda2: Penalty,
    pub lambda3: Penalty,
}

impl Penalties {
    pub fn auto() -> Self {
        Self {
            lambda0: Penalty::Auto,
            lambda1: Penalty::Auto,
            lambda2: Penalty::Auto,
            lambda3: Penalty::Auto,
        }
    }

    pub fn fixed(lambda: f64) -> Self {
        Self {
            lambda0: Penalty::Fixed(lambda),
            lambda1: Penalty::Fixed(lambda),
            lambda2: Penalty::Fixed(lambda),
            lambda3: Penalty::Fixed(lambda),
        }
    }

    pub fn rule(&self) -> PenaltyRule {
        let all = [self.lambda0, self.lambda1, self.lambda2, self.lambda3];
        if all.iter().all(|p| matches!(p, Penalty::Fixed(_))) {
            PenaltyRule::Fixed
        } else {
            PenaltyRule::GcvFirstStagesPlusScaledLambda0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Basis on `V`.
    pub rho: BasisSpec,
    /// Basis on `X`.
    pub chi: BasisSpec,
    /// Basis on `(X, Z)`.
    pub psi: BasisSpec,
    pub penalties: Penalties,
    #[serde(default)]
    pub penalize_intercept: bool,
    /// Treat `X` as discrete (saturated `chi`) when every treatment column
    /// has at most this many distinct values. `None` disables detection.
    #[serde(default = "default_discrete_threshold")]
    pub discrete_threshold: Option<usize>,
    #[serde(default)]
    pub singular_policy: SingularPolicy,
}

fn default_discrete_threshold() -> Option<usize> {
    Some(10)
}

impl EstimatorConfig {
    /// Power series of one common degree on every design, automatic penalties.
    pub fn power_series(dx: usize, dz: usize, dv: usize, degree: usize) -> Self {
        Self {
            rho: BasisSpec::power_series(dv, degree),
            chi: BasisSpec::power_series(dx, degree),
            psi: BasisSpec::power_series(dx + dz, degree),
            penalties: Penalties::auto(),
            penalize_intercept: false,
            discrete_threshold: default_discrete_threshold(),
            singular_policy: SingularPolicy::Error,
        }
    }

    /// Saturated indicator bases everywhere, one fixed penalty.
    pub fn saturated(dx: usize, dz: usize, dv: usize, lambda: f64) -> Self {
        Self {
            rho: BasisSpec::indicator(dv),
            chi: BasisSpec::indicator(dx),
            psi: BasisSpec::indicator(dx + dz),
            penalties: Penalties::fixed(lambda),
            penalize_intercept: false,
            discrete_threshold: None,
            singular_policy: SingularPolicy::Error,
        }
    }

    pub fn validate_for(&self, data: &Dataset) -> Result<()> {
        self.rho.validate("rho")?;
        self.chi.validate("chi")?;
        self.psi.validate("psi")?;
        let checks = [
            ("rho", self.rho.input_dim, data.v.ncols()),
            ("chi", self.chi.input_dim, data.x.ncols()),
            ("psi", self.psi.input_dim, data.x.ncols() + data.z.ncols()),
        ];
        for (name, want, got) in checks {
            if want != got {
                return Err(Error::Dimension(format!("{name} expects input dimension {want}, data has {got}")));
            }
        }
        if data.n() < 2 {
            return Err(Error::InvalidArgument("estimation needs n >= 2".into()));
        }
        Ok(())
    }

    fn resolved_chi(&self, x: &DMatrix<f64>) -> BasisSpec {
        match self.discrete_threshold {
            Some(limit) if self.chi.kind == BasisKind::PowerSeries => {
                let discrete = x.column_iter().all(|col| {
                    let mut vals: Vec<f64> = col.iter().map(|&v| v + 0.0).collect();
                    vals.sort_by(f64::total_cmp);
                    vals.dedup();
                    vals.len() <= limit
                });
                if discrete {
                    BasisSpec::indicator(self.chi.input_dim)
                } else {
                    self.chi.clone()
                }
            }
            _ => self.chi.clone(),
        }
    }
}

/// Basis, standardizer and observed range for one design.
#[derive(Debug, Clone)]
pub(crate) struct FittedDesign {
    basis: Basis,
    standardizer: Option<Standardizer>,
    range: Vec<(f64, f64)>,
}

impl FittedDesign {
    fn fit(spec: &BasisSpec, points: &DMatrix<f64>) -> Result<(Self, DMatrix<f64>)> {
        let basis = Basis::new(spec, points)?;
        let raw = basis.evaluate(points)?;
        let (standardizer, values) = if spec.standardize {
            let std = Standardizer::fit(&raw.values, basis.intercept_index())?;
            let values = std.apply(&raw.values)?;
            (Some(std), values)
        } else {
            (None, raw.values)
        };
        let range = points
            .column_iter()
            .map(|c| (c.min(), c.max()))
            .collect();
        Ok((
            Self {
                basis,
                standardizer,
                range,
            },
            values,
        ))
    }

    fn width(&self) -> usize {
        self.standardizer
            .as_ref()
            .map_or(self.basis.width(), |s| s.output_width())
    }

    fn intercept(&self) -> Option<usize> {
        match &self.standardizer {
            Some(s) => s.output_intercept(),
            None => self.basis.intercept_index(),
        }
    }

    fn row(&self, point: &[f64]) -> Result<Vec<f64>> {
        let raw = self.basis.evaluate_point(point)?;
        Ok(match &self.standardizer {
            Some(s) => {
                let mut out = Vec::with_capacity(s.output_width());
                s.apply_row(&raw, &mut out);
                out
            }
            None => raw,
        })
    }

    fn mask(&self, penalize_intercept: bool) -> Vec<bool> {
        let icpt = self.intercept();
        (0..self.width())
            .map(|j| penalize_intercept || Some(j) != icpt)
            .collect()
    }

    fn extrapolation(&self, point: &[f64]) -> Option<String> {
        if self.basis.spec().kind != BasisKind::PowerSeries {
            return None;
        }
        point
            .iter()
            .zip(&self.range)
            .enumerate()
            .find(|(_, (p, (lo, hi)))| *p < lo || *p > hi)
            .map(|(j, (p, (lo, hi)))| {
                format!("treatment coordinate {j} = {p} lies outside the observed range [{lo}, {hi}]")
            })
    }
}

/// The pieces shared by the proxy estimator and the naive comparator:
/// bases on `V` and `X`, the `rho`-on-`chi` projection and the Kronecker
/// standardizer.
#[derive(Debug, Clone)]
pub(crate) struct Sieve {
    rho: FittedDesign,
    chi: FittedDesign,
    pub(crate) alpha_stage: RidgeFit,
    phi_standardizer: Option<Standardizer>,
    chi_mean: Vec<f64>,
}

pub(crate) struct SieveDesigns {
    pub rho: DMatrix<f64>,
    pub chi: DMatrix<f64>,
}

impl Sieve {
    pub(crate) fn fit(data: &Dataset, config: &EstimatorConfig) -> Result<(Self, SieveDesigns, f64)> {
        let chi_spec = config.resolved_chi(&data.x);
        let (rho, rho_values) = FittedDesign::fit(&config.rho, &data.v)?;
        let (chi, chi_values) = FittedDesign::fit(&chi_spec, &data.x)?;

        let chi_mask = chi.mask(config.penalize_intercept);
        let lambda3 = match config.penalties.lambda3 {
            Penalty::Fixed(v) => v,
            Penalty::Auto => gcv::select_lambda(&chi_values, &rho_values, &chi_mask, config.singular_policy)?,
        };
        let alpha_stage = ridge_fit_with(&chi_values, &rho_values, lambda3, &chi_mask, config.singular_policy)?;

        let n = data.n() as f64;
        let (k, l) = (rho_values.ncols(), chi_values.ncols());
        let phi_standardizer = if config.rho.standardize && chi_spec.standardize {
            let mean = rho_values.tr_mul(&chi_values) / n;
            let sq = rho_values.map(|v| v * v).tr_mul(&chi_values.map(|v| v * v)) / n;
            let mut means = Vec::with_capacity(k * l);
            let mut sds = Vec::with_capacity(k * l);
            for a in 0..k {
                for b in 0..l {
                    let m = mean[(a, b)];
                    means.push(m);
                    sds.push((sq[(a, b)] - m * m).max(0.0).sqrt());
                }
            }
            let icpt = match (rho.intercept(), chi.intercept()) {
                (Some(a), Some(b)) => Some(a * l + b),
                _ => None,
            };
            Some(Standardizer::from_moments(means, sds, icpt)?)
        } else {
            None
        };
        let chi_mean = chi_values.row_mean().iter().copied().collect();

        Ok((
            Self {
                rho,
                chi,
                alpha_stage,
                phi_standardizer,
                chi_mean,
            },
            SieveDesigns {
                rho: rho_values,
                chi: chi_values,
            },
            lambda3,
        ))
    }

    pub(crate) fn phi_width(&self) -> usize {
        self.phi_standardizer
            .as_ref()
            .map_or(self.rho.width() * self.chi.width(), |s| s.output_width())
    }

    pub(crate) fn phi_intercept(&self) -> Option<usize> {
        match &self.phi_standardizer {
            Some(s) => s.output_intercept(),
            None => None,
        }
    }

    pub(crate) fn phi_mask(&self, penalize_intercept: bool) -> Vec<bool> {
        let icpt = self.phi_intercept();
        (0..self.phi_width())
            .map(|j| penalize_intercept || Some(j) != icpt)
            .collect()
    }

    /// `std(left ⊗ right)` into `out`.
    fn phi_row(&self, left: &[f64], right: &[f64], scratch: &mut Vec<f64>, out: &mut Vec<f64>) {
        kron_vec(left, right, scratch);
        match &self.phi_standardizer {
            Some(s) => s.apply_row(scratch, out),
            None => {
                out.clear();
                out.extend_from_slice(scratch);
            }
        }
    }

    /// Stacks `std(left_i ⊗ right_i)` for rows `start..end`.
    pub(crate) fn phi_block(
        &self,
        left: &DMatrix<f64>,
        right: &DMatrix<f64>,
        start: usize,
        end: usize,
    ) -> DMatrix<f64> {
        let q = self.phi_width();
        let mut block = DMatrix::zeros(end - start, q);
        let mut scratch = Vec::new();
        let mut out = Vec::with_capacity(q);
        let mut lrow = vec![0.0; left.ncols()];
        let mut rrow = vec![0.0; right.ncols()];
        for i in start..end {
            for (j, s) in lrow.iter_mut().enumerate() {
                *s = left[(i, j)];
            }
            for (j, s) in rrow.iter_mut().enumerate() {
                *s = right[(i, j)];
            }
            self.phi_row(&lrow, &rrow, &mut scratch, &mut out);
            for (j, &v) in out.iter().enumerate() {
                block[(i - start, j)] = v;
            }
        }
        block
    }

    /// `chi(x2)' A`: the estimated `E[rho(V) | X = x2]`.
    fn projected_rho(&self, chi_row: &[f64]) -> Vec<f64> {
        let coef = &self.alpha_stage.coefficients;
        (0..coef.ncols())
            .map(|a| chi_row.iter().enumerate().map(|(j, c)| c * coef[(j, a)]).sum())
            .collect()
    }

    fn alpha_from_projection(&self, projected: &[f64], x1: &[f64]) -> Result<Vec<f64>> {
        let chi1 = self.chi.row(x1)?;
        let mut scratch = Vec::new();
        let mut out = Vec::new();
        self.phi_row(projected, &chi1, &mut scratch, &mut out);
        Ok(out)
    }

    /// `alpha(x1, x2)` in the standardized Kronecker layout.
    pub(crate) fn alpha(&self, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        let chi2 = self.chi.row(x2)?;
        self.alpha_from_projection(&self.projected_rho(&chi2), x1)
    }

    /// `(1/n) sum_i alpha(x1, X_i)`, exact by linearity.
    pub(crate) fn averaged_alpha(&self, x1: &[f64]) -> Result<Vec<f64>> {
        self.alpha_from_projection(&self.projected_rho(&self.chi_mean), x1)
    }

    pub(crate) fn extrapolation(&self, point: &[f64]) -> Option<String> {
        self.chi.extrapolation(point)
    }

    pub(crate) fn chi_dim(&self) -> usize {
        self.chi.basis.spec().input_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPenalties {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

#[derive(Debug, Clone)]
pub struct FittedEstimator {
    pub theta_hat: DVector<f64>,
    /// `Y` on `psi`.
    pub g_stage: RidgeFit,
    /// `rho` columns on `psi`.
    pub pi_stage: RidgeFit,
    pub config: EstimatorConfig,
    pub penalties: ResolvedPenalties,
    pub n: usize,
    /// Normal-equation residual `|Sigma theta - b| / |b|`.
    pub normal_residual: f64,
    sieve: Sieve,
}

impl FittedEstimator {
    pub fn alpha_stage(&self) -> &RidgeFit {
        &self.sieve.alpha_stage
    }

    pub fn casf(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        self.check_point(x1)?;
        self.check_point(x2)?;
        let alpha = self.sieve.alpha(x1, x2)?;
        Ok(dot(&alpha, &self.theta_hat))
    }

    /// Warning text when a treatment point lies outside the training range
    /// of a power-series `chi`.
    pub fn extrapolation_warning(&self, point: &[f64]) -> Option<String> {
        self.sieve.extrapolation(point)
    }

    pub fn treatment_dim(&self) -> usize {
        self.sieve.chi_dim()
    }

    pub(crate) fn sieve(&self) -> &Sieve {
        &self.sieve
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.sieve.chi_dim() {
            return Err(Error::Dimension(format!(
                "treatment point has dimension {}, expected {}",
                x.len(),
                self.sieve.chi_dim()
            )));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn fit(data: &Dataset, config: &EstimatorConfig) -> Result<FittedEstimator> {
    config.validate_for(data)?;
    let n = data.n();
    let (sieve, designs, lambda3) = Sieve::fit(data, config)?;
    let (psi, psi_values) = FittedDesign::fit(&config.psi, &data.xz())?;
    let psi_mask = psi.mask(config.penalize_intercept);

    let y = DMatrix::from_column_slice(n, 1, data.y.as_slice());
    let lambda1 = match config.penalties.lambda1 {
        Penalty::Fixed(v) => v,
        Penalty::Auto => gcv::select_lambda(&psi_values, &y, &psi_mask, config.singular_policy)?,
    };
    let lambda2 = match config.penalties.lambda2 {
        Penalty::Fixed(v) => v,
        Penalty::Auto => gcv::select_lambda(&psi_values, &designs.rho, &psi_mask, config.singular_policy)?,
    };
    let g_stage = ridge_fit_with(&psi_values, &y, lambda1, &psi_mask, config.singular_policy)?;
    let pi_stage = ridge_fit_with(&psi_values, &designs.rho, lambda2, &psi_mask, config.singular_policy)?;
    let g_hat = &psi_values * &g_stage.coefficients;
    let rho_hat = &psi_values * &pi_stage.coefficients;

    let q = sieve.phi_width();
    if matches!(config.penalties.lambda0, Penalty::Fixed(v) if v == 0.0) && q >= n {
        return Err(Error::InvalidArgument(format!(
            "lambda0 must be positive when the sieve dimension {q} is at least n = {n}"
        )));
    }
    let mut sigma = DMatrix::zeros(q, q);
    let mut cross = DMatrix::zeros(q, 1);
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK_ROWS).min(n);
        let block = sieve.phi_block(&rho_hat, &designs.chi, start, end);
        sigma += block.tr_mul(&block);
        cross += block.tr_mul(&g_hat.rows(start, end - start));
        start = end;
    }
    sigma /= n as f64;
    cross /= n as f64;

    let lambda0 = match config.penalties.lambda0 {
        Penalty::Fixed(v) => v,
        Penalty::Auto => sigma.trace() / q as f64 / (n as f64).sqrt(),
    };
    let mask = sieve.phi_mask(config.penalize_intercept);
    let theta = solve_penalized(&sigma, &cross, lambda0, &mask, config.singular_policy)?;
    let theta_hat = DVector::from_column_slice(theta.as_slice());

    let mut system = sigma;
    for (j, &pen) in mask.iter().enumerate() {
        if pen {
            system[(j, j)] += lambda0;
        }
    }
    let resid = (&system * &theta_hat - cross.column(0)).norm();
    let scale = cross.norm();
    let normal_residual = if scale > 0.0 { resid / scale } else { resid };

    Ok(FittedEstimator {
        theta_hat,
        g_stage,
        pi_stage,
        config: config.clone(),
        penalties: ResolvedPenalties {
            lambda0,
            lambda1,
            lambda2,
            lambda3,
        },
        n,
        normal_residual,
        sieve,
    })
}

pub fn casf(fit: &FittedEstimator, x1: &[f64], x2: &[f64]) -> Result<f64> {
    fit.casf(x1, x2)
}
