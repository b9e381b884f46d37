//! Closed-form ridge regression with a per-coefficient penalty mask.
//!
//! Solves `((1/n) X'X + lambda * diag(mask)) C = (1/n) X'Y` for a block of
//! targets at once.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff for the rank decision.
const RANK_CUTOFF: f64 = 1e-12;

/// What to do when the penalized Gram matrix is numerically singular.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularPolicy {
    #[default]
    Error,
    PseudoInverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub coefficients: DMatrix<f64>,
    pub lambda: f64,
    pub penalize_mask: Vec<bool>,
    /// `(1/n) X'X`, unpenalized.
    pub gram: DMatrix<f64>,
    pub n: usize,
}

/// Normalized second moments of a regression problem.
#[derive(Debug, Clone)]
pub struct Moments {
    pub gram: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub n: usize,
}

impl Moments {
    pub fn from_data(features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("ridge regression needs n >= 1".into()));
        }
        if targets.nrows() != n {
            return Err(Error::Dimension(format!(
                "{} feature rows vs {} target rows",
                n,
                targets.nrows()
            )));
        }
        if features.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ridge inputs".into()));
        }
        let scale = 1.0 / n as f64;
        Ok(Self {
            gram: features.tr_mul(features) * scale,
            cross: features.tr_mul(targets) * scale,
            n,
        })
    }
}

pub fn ridge_fit(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
    penalize_mask: &[bool],
) -> Result<RidgeFit> {
    ridge_fit_with(features, targets, lambda, penalize_mask, SingularPolicy::Error)
}

pub fn ridge_fit_with(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
    penalize_mask: &[bool],
    policy: SingularPolicy,
) -> Result<RidgeFit> {
    let moments = Moments::from_data(features, targets)?;
    let coefficients = solve_penalized(&moments.gram, &moments.cross, lambda, penalize_mask, policy)?;
    Ok(RidgeFit {
        coefficients,
        lambda,
        penalize_mask: penalize_mask.to_vec(),
        gram: moments.gram,
        n: moments.n,
    })
}

/// Solves `(gram + lambda * diag(mask)) C = cross`.
pub fn solve_penalized(
    gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    lambda: f64,
    penalize_mask: &[bool],
    policy: SingularPolicy,
) -> Result<DMatrix<f64>> {
    let p = gram.nrows();
    if gram.ncols() != p || cross.nrows() != p {
        return Err(Error::Dimension(format!(
            "gram is {}x{}, cross has {} rows",
            p,
            gram.ncols(),
            cross.nrows()
        )));
    }
    if penalize_mask.len() != p {
        return Err(Error::Dimension(format!(
            "penalize mask has length {}, expected {}",
            penalize_mask.len(),
            p
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge penalty must be finite and >= 0, got {lambda}")));
    }
    let mut system = gram.clone();
    for (j, &pen) in penalize_mask.iter().enumerate() {
        if pen {
            system[(j, j)] += lambda;
        }
    }

    if let Some(chol) = system.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d * d), hi.max(d * d)));
        if hi > 0.0 && lo / hi > RANK_CUTOFF {
            return Ok(chol.solve(cross));
        }
    }
    eigen_solve(system, cross, policy)
}

fn eigen_solve(system: DMatrix<f64>, cross: &DMatrix<f64>, policy: SingularPolicy) -> Result<DMatrix<f64>> {
    let p = system.nrows();
    let eig = SymmetricEigen::new(system);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let cutoff = RANK_CUTOFF * top;
    let rank = eig.eigenvalues.iter().filter(|&&v| v > cutoff).count();
    if rank < p && policy == SingularPolicy::Error {
        return Err(Error::Singular { rank, dim: p });
    }
    let q = &eig.eigenvectors;
    let mut rotated = q.tr_mul(cross);
    for (k, &val) in eig.eigenvalues.iter().enumerate() {
        let inv = if val > cutoff { 1.0 / val } else { 0.0 };
        rotated.row_mut(k).scale_mut(inv);
    }
    Ok(q * rotated)
}

pub fn ridge_predict(fit: &RidgeFit, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if features.ncols() != fit.coefficients.nrows() {
        return Err(Error::Dimension(format!(
            "features have {} columns, fit has {} coefficients",
            features.ncols(),
            fit.coefficients.nrows()
        )));
    }
    Ok(features * &fit.coefficients)
}
