//! Exact identification calculations for finite-support models.
//!
//! A [`DiscreteModel`] specifies the latent law: `p(w)`, `p(x, z | w)`,
//! `p(v | w)` and structural means `mu(x, w)`. Everything an analyst could
//! observe is collected in an [`ObservableLaw`]; the gamma route, the phi
//! route and the singular-system calculations only touch observables, so they
//! also run on empirical contingency tables.
//!
//! Functions on `V` live in `L2(F_{V|X=x})` and functions on `Z` in
//! `L2(F_{Z|X=x})`. Minimal-norm solutions are minimal in those weighted
//! norms.

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Dataset;

const PMF_TOL: f64 = 1e-12;
const SOLVE_TOL: f64 = 1e-8;
const RANGE_TOL: f64 = 1e-10;
const ZERO_SINGULAR: f64 = 1e-12;
const COMPLETENESS_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    /// `p(w)`, length `nw`.
    pub p_w: Vec<f64>,
    /// `p(x, z | w)` indexed `[w][x][z]`.
    pub p_xz_given_w: Vec<Vec<Vec<f64>>>,
    /// `p(v | w)` indexed `[w][v]`.
    pub p_v_given_w: Vec<Vec<f64>>,
    /// `mu(x, w) = E[y0(x, U) | W* = w]` indexed `[x][w]`.
    pub mu: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    V,
    Z,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub rank: usize,
    pub required: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellPosednessReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl DiscreteModel {
    pub fn nw(&self) -> usize {
        self.p_w.len()
    }

    pub fn nx(&self) -> usize {
        self.mu.len()
    }

    pub fn nz(&self) -> usize {
        self.p_xz_given_w
            .first()
            .and_then(|t| t.first())
            .map_or(0, |r| r.len())
    }

    pub fn nv(&self) -> usize {
        self.p_v_given_w.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        let (nw, nx, nz, nv) = (self.nw(), self.nx(), self.nz(), self.nv());
        if nw == 0 || nx == 0 || nz == 0 || nv == 0 {
            return Err(Error::InvalidArgument("model support sizes must be >= 1".into()));
        }
        check_pmf(&self.p_w, "p_w")?;
        if self.p_xz_given_w.len() != nw || self.p_v_given_w.len() != nw {
            return Err(Error::Dimension("conditional tables must have one entry per w".into()));
        }
        for (w, table) in self.p_xz_given_w.iter().enumerate() {
            if table.len() != nx || table.iter().any(|r| r.len() != nz) {
                return Err(Error::Dimension(format!("p_xz_given_w[{w}] is not {nx}x{nz}")));
            }
            let flat: Vec<f64> = table.iter().flatten().copied().collect();
            check_pmf(&flat, &format!("p_xz_given_w[{w}]"))?;
        }
        for (w, row) in self.p_v_given_w.iter().enumerate() {
            if row.len() != nv {
                return Err(Error::Dimension(format!("p_v_given_w[{w}] has wrong length")));
            }
            check_pmf(row, &format!("p_v_given_w[{w}]"))?;
        }
        if self.mu.iter().any(|r| r.len() != nw) {
            return Err(Error::Dimension("mu must be nx x nw".into()));
        }
        if self.mu.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mu".into()));
        }
        for x in 0..nx {
            if self.p_x(x) <= 0.0 {
                return Err(Error::InvalidArgument(format!("p(x={x}) is zero")));
            }
        }
        Ok(())
    }

    fn p_wx(&self, w: usize, x: usize) -> f64 {
        self.p_w[w] * self.p_xz_given_w[w][x].iter().sum::<f64>()
    }

    pub fn p_x(&self, x: usize) -> f64 {
        (0..self.nw()).map(|w| self.p_wx(w, x)).sum()
    }

    /// `p(w | X = x)`.
    pub fn p_w_given_x(&self, x: usize) -> Vec<f64> {
        normalize((0..self.nw()).map(|w| self.p_wx(w, x)).collect())
    }

    /// Backdoor formula: `sum_w mu(x1, w) p(w | X = x2)`.
    pub fn true_casf(&self, x1: usize, x2: usize) -> f64 {
        self.p_w_given_x(x2)
            .iter()
            .enumerate()
            .map(|(w, p)| self.mu[x1][w] * p)
            .sum()
    }

    pub fn observables(&self) -> ObservableLaw {
        let (nw, nx, nz, nv) = (self.nw(), self.nx(), self.nz(), self.nv());
        let mut p_xzv = vec![0.0; nx * nz * nv];
        let mut ey_xz = vec![0.0; nx * nz];
        for x in 0..nx {
            for z in 0..nz {
                let mut mass = 0.0;
                let mut first = 0.0;
                for w in 0..nw {
                    let pwxz = self.p_w[w] * self.p_xz_given_w[w][x][z];
                    mass += pwxz;
                    first += pwxz * self.mu[x][w];
                    for v in 0..nv {
                        p_xzv[(x * nz + z) * nv + v] += pwxz * self.p_v_given_w[w][v];
                    }
                }
                ey_xz[x * nz + z] = if mass > 0.0 { first / mass } else { 0.0 };
            }
        }
        ObservableLaw { nx, nz, nv, p_xzv, ey_xz }
    }

    fn proxy_matrix(&self, x: usize, side: Side) -> Option<DMatrix<f64>> {
        let nw = self.nw();
        let rows: Vec<Vec<f64>> = match side {
            Side::Z => (0..self.nz())
                .map(|z| (0..nw).map(|w| self.p_w[w] * self.p_xz_given_w[w][x][z]).collect())
                .collect(),
            Side::V => (0..self.nv())
                .map(|v| (0..nw).map(|w| self.p_wx(w, x) * self.p_v_given_w[w][v]).collect())
                .collect(),
        };
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .filter(|r| r.iter().sum::<f64>() > 0.0)
            .map(normalize)
            .collect();
        (!rows.is_empty()).then(|| DMatrix::from_fn(rows.len(), nw, |i, j| rows[i][j]))
    }

    /// Rank of `[p(w | x, z)]` (side `Z`) or `[p(w | x, v)]` (side `V`).
    pub fn completeness_check(&self, x: usize, side: Side) -> CompletenessReport {
        let rank = self
            .proxy_matrix(x, side)
            .map_or(0, |m| numerical_rank(&m, COMPLETENESS_CUTOFF));
        CompletenessReport {
            rank,
            required: self.nw(),
            pass: rank == self.nw(),
        }
    }

    fn require_complete(&self, x: usize, side: Side) -> Result<()> {
        let report = self.completeness_check(x, side);
        if report.pass {
            Ok(())
        } else {
            Err(Error::Identification(format!(
                "{side:?}-side completeness fails at x={x}: rank {} < {}",
                report.rank, report.required
            )))
        }
    }

    pub fn solve_gamma(&self, x: usize) -> Result<Vec<f64>> {
        self.require_complete(x, Side::V)?;
        self.observables().solve_gamma(x)
    }

    pub fn casf_via_gamma(&self, x1: usize, x2: usize) -> Result<f64> {
        self.require_complete(x1, Side::Z)?;
        let gamma = self.solve_gamma(x1)?;
        Ok(self.observables().average_over_v(&gamma, x2))
    }

    pub fn solve_phi(&self, x1: usize, x2: usize) -> Result<Vec<f64>> {
        self.require_complete(x1, Side::Z)?;
        self.observables().solve_phi(x1, x2)
    }

    pub fn casf_via_phi(&self, x1: usize, x2: usize) -> Result<f64> {
        self.require_complete(x1, Side::V)?;
        let phi = self.solve_phi(x1, x2)?;
        Ok(self.observables().weighted_outcome(&phi, x1))
    }

    pub fn picard_constant(&self, x1: usize, x2: usize) -> Result<f64> {
        self.observables().picard_constant(x1, x2)
    }

    pub fn dual_picard_constant(&self, x: usize) -> Result<f64> {
        self.observables().dual_picard_constant(x)
    }

    /// Checks `(casf - E[g~(x1, V) | x2])^2 <= C(x1, x2) E[(E[Y - g~(x1, V) | x1, Z])^2 | x1]`.
    pub fn wellposedness_check(&self, x1: usize, x2: usize, gamma_tilde: &[f64]) -> Result<WellPosednessReport> {
        let law = self.observables();
        if gamma_tilde.len() != law.nv {
            return Err(Error::Dimension(format!("gamma_tilde has length {}, expected {}", gamma_tilde.len(), law.nv)));
        }
        let c = law.picard_constant(x1, x2)?;
        let lhs = (self.true_casf(x1, x2) - law.average_over_v(gamma_tilde, x2)).powi(2);
        let pz = law.p_z_given_x(x1);
        let mut moment = 0.0;
        for z in 0..law.nz {
            if pz[z] == 0.0 {
                continue;
            }
            let pv = law.p_v_given_xz(x1, z);
            let fitted: f64 = gamma_tilde.iter().zip(&pv).map(|(g, p)| g * p).sum();
            moment += pz[z] * (law.ey(x1, z) - fitted).powi(2);
        }
        let rhs = c * moment;
        Ok(WellPosednessReport {
            lhs,
            rhs,
            holds: lhs <= rhs + SOLVE_TOL,
        })
    }

    /// Dual check: `(casf - E[Y f~(Z) | x1])^2 <= D(x1) E[(E[f~(Z) | x1, V] - r(V))^2 | x1]`.
    pub fn dual_wellposedness_check(&self, x1: usize, x2: usize, phi_tilde: &[f64]) -> Result<WellPosednessReport> {
        let law = self.observables();
        if phi_tilde.len() != law.nz {
            return Err(Error::Dimension(format!("phi_tilde has length {}, expected {}", phi_tilde.len(), law.nz)));
        }
        let d = law.dual_picard_constant(x1)?;
        let lhs = (self.true_casf(x1, x2) - law.weighted_outcome(phi_tilde, x1)).powi(2);
        let ratio = law.density_ratio(x1, x2)?;
        let pv = law.p_v_given_x(x1);
        let mut moment = 0.0;
        for v in 0..law.nv {
            if pv[v] == 0.0 {
                continue;
            }
            let pz = law.p_z_given_xv(x1, v);
            let fitted: f64 = phi_tilde.iter().zip(&pz).map(|(f, p)| f * p).sum();
            moment += pv[v] * (fitted - ratio[v]).powi(2);
        }
        let rhs = d * moment;
        Ok(WellPosednessReport {
            lhs,
            rhs,
            holds: lhs <= rhs + SOLVE_TOL,
        })
    }

    /// Model with `V = Z = W*` exactly; `p_x_given_w` is indexed `[w][x]`.
    pub fn perfect_proxies(p_w: Vec<f64>, p_x_given_w: Vec<Vec<f64>>, mu: Vec<Vec<f64>>) -> Self {
        let nw = p_w.len();
        let p_xz_given_w = (0..nw)
            .map(|w| {
                p_x_given_w[w]
                    .iter()
                    .map(|&px| (0..nw).map(|z| if z == w { px } else { 0.0 }).collect())
                    .collect()
            })
            .collect();
        let p_v_given_w = (0..nw)
            .map(|w| (0..nw).map(|v| if v == w { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            p_w,
            p_xz_given_w,
            p_v_given_w,
            mu,
        }
    }
}

/// Draws a model whose pmf entries are all at least `floor`.
pub fn random_model<R: Rng>(rng: &mut R, nw: usize, nx: usize, nz: usize, nv: usize, floor: f64) -> DiscreteModel {
    let mut pmf = |len: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let free = 1.0 - floor * len as f64;
        raw.iter().map(|r| floor + free * r / total).collect()
    };
    let p_w = pmf(nw);
    let p_xz_given_w = (0..nw)
        .map(|_| {
            let flat = pmf(nx * nz);
            flat.chunks(nz).map(|c| c.to_vec()).collect()
        })
        .collect();
    let p_v_given_w = (0..nw).map(|_| pmf(nv)).collect();
    let mu = (0..nx)
        .map(|_| (0..nw).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    DiscreteModel {
        p_w,
        p_xz_given_w,
        p_v_given_w,
        mu,
    }
}

/// Joint law of `(X, Z, V)` and `E[Y | X, Z]`, with every variable coded
/// `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableLaw {
    pub nx: usize,
    pub nz: usize,
    pub nv: usize,
    /// `p(x, z, v)` at `(x * nz + z) * nv + v`.
    pub p_xzv: Vec<f64>,
    /// `E[Y | x, z]` at `x * nz + z`.
    pub ey_xz: Vec<f64>,
}

/// Singular system of `A_x: L2(F_{V|x}) -> L2(F_{Z|x})`, `A[d](z) = E[d(V) | x, z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSystem {
    /// Descending.
    pub values: Vec<f64>,
    /// `u_k` as functions of `v`.
    pub v_functions: Vec<Vec<f64>>,
    /// `v_k` as functions of `z`.
    pub z_functions: Vec<Vec<f64>>,
    pub v_weights: Vec<f64>,
    pub z_weights: Vec<f64>,
}

impl SingularSystem {
    /// Largest deviation of the weighted Gram matrices from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        fn gram_err(fs: &[Vec<f64>], w: &[f64]) -> f64 {
            let mut worst = 0.0f64;
            for (j, a) in fs.iter().enumerate() {
                for (k, b) in fs.iter().enumerate() {
                    let ip: f64 = a.iter().zip(b).zip(w).map(|((x, y), p)| x * y * p).sum();
                    let target = if j == k { 1.0 } else { 0.0 };
                    worst = worst.max((ip - target).abs());
                }
            }
            worst
        }
        gram_err(&self.v_functions, &self.v_weights).max(gram_err(&self.z_functions, &self.z_weights))
    }

    fn nonzero(&self) -> usize {
        let top = self.values.first().copied().unwrap_or(0.0);
        self.values.iter().filter(|&&s| s > ZERO_SINGULAR * top).count()
    }
}

impl ObservableLaw {
    pub fn validate(&self) -> Result<()> {
        if self.p_xzv.len() != self.nx * self.nz * self.nv || self.ey_xz.len() != self.nx * self.nz {
            return Err(Error::Dimension("observable tables have inconsistent sizes".into()));
        }
        check_pmf(&self.p_xzv, "p_xzv")
    }

    fn p(&self, x: usize, z: usize, v: usize) -> f64 {
        self.p_xzv[(x * self.nz + z) * self.nv + v]
    }

    pub fn ey(&self, x: usize, z: usize) -> f64 {
        self.ey_xz[x * self.nz + z]
    }

    pub fn p_x(&self, x: usize) -> f64 {
        self.p_xzv[x * self.nz * self.nv..(x + 1) * self.nz * self.nv].iter().sum()
    }

    /// `p(z, v | x)` as an `nz x nv` matrix.
    pub fn joint_zv(&self, x: usize) -> DMatrix<f64> {
        let px = self.p_x(x);
        DMatrix::from_fn(self.nz, self.nv, |z, v| self.p(x, z, v) / px)
    }

    pub fn p_z_given_x(&self, x: usize) -> Vec<f64> {
        self.joint_zv(x).column_sum().iter().copied().collect()
    }

    pub fn p_v_given_x(&self, x: usize) -> Vec<f64> {
        self.joint_zv(x).row_sum().iter().copied().collect()
    }

    pub fn p_v_given_xz(&self, x: usize, z: usize) -> Vec<f64> {
        normalize((0..self.nv).map(|v| self.p(x, z, v)).collect())
    }

    pub fn p_z_given_xv(&self, x: usize, v: usize) -> Vec<f64> {
        normalize((0..self.nz).map(|z| self.p(x, z, v)).collect())
    }

    /// `dF_{V|x2} / dF_{V|x1}` on the support of `V | x1` (zero elsewhere).
    pub fn density_ratio(&self, x1: usize, x2: usize) -> Result<Vec<f64>> {
        let p1 = self.p_v_given_x(x1);
        let p2 = self.p_v_given_x(x2);
        p1.iter()
            .zip(&p2)
            .enumerate()
            .map(|(v, (&a, &b))| {
                if a > 0.0 {
                    Ok(b / a)
                } else if b > 0.0 {
                    Err(Error::AbsoluteContinuity { v })
                } else {
                    Ok(0.0)
                }
            })
            .collect()
    }

    /// `E[d(V) | X = x]`.
    pub fn average_over_v(&self, d: &[f64], x: usize) -> f64 {
        self.p_v_given_x(x).iter().zip(d).map(|(p, g)| p * g).sum()
    }

    /// `E[Y f(Z) | X = x]`.
    pub fn weighted_outcome(&self, f: &[f64], x: usize) -> f64 {
        self.p_z_given_x(x)
            .iter()
            .enumerate()
            .map(|(z, p)| p * self.ey(x, z) * f[z])
            .sum()
    }

    fn check_x(&self, x: usize) -> Result<()> {
        if x >= self.nx || self.p_x(x) <= 0.0 {
            return Err(Error::InvalidArgument(format!("treatment level {x} has no mass")));
        }
        Ok(())
    }

    /// Operator matrix in weighted-orthonormal coordinates:
    /// `M[z][v] = p(z, v | x) / sqrt(p(z | x) p(v | x))`.
    fn operator_matrix(&self, x: usize) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let joint = self.joint_zv(x);
        let pz: Vec<f64> = joint.column_sum().iter().copied().collect();
        let pv: Vec<f64> = joint.row_sum().iter().copied().collect();
        let m = DMatrix::from_fn(self.nz, self.nv, |z, v| {
            let d = (pz[z] * pv[v]).sqrt();
            if d > 0.0 {
                joint[(z, v)] / d
            } else {
                0.0
            }
        });
        (m, pz, pv)
    }

    pub fn singular_system(&self, x: usize) -> Result<SingularSystem> {
        self.check_x(x)?;
        let (m, pz, pv) = self.operator_matrix(x);
        let svd = SVD::new(m, true, true);
        let u = svd.u.as_ref().expect("requested U");
        let vt = svd.v_t.as_ref().expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let unweight = |coords: Vec<f64>, w: &[f64]| -> Vec<f64> {
            coords
                .iter()
                .zip(w)
                .map(|(c, p)| if *p > 0.0 { c / p.sqrt() } else { 0.0 })
                .collect()
        };
        Ok(SingularSystem {
            values: order.iter().map(|&k| svd.singular_values[k]).collect(),
            v_functions: order
                .iter()
                .map(|&k| unweight(vt.row(k).iter().copied().collect(), &pv))
                .collect(),
            z_functions: order
                .iter()
                .map(|&k| unweight(u.column(k).iter().copied().collect(), &pz))
                .collect(),
            v_weights: pv,
            z_weights: pz,
        })
    }

    /// Picard sum `sum_k mu_k^-2 <delta, f_k>^2` over nonzero singular
    /// values, erroring if `delta` leaves the span of the `f_k`.
    fn picard_sum(values: &[f64], active: usize, functions: &[Vec<f64>], weights: &[f64], delta: &[f64]) -> Result<f64> {
        let norm2: f64 = delta.iter().zip(weights).map(|(d, w)| d * d * w).sum();
        let mut remainder = delta.to_vec();
        let mut sum = 0.0;
        for k in 0..active {
            let coef: f64 = delta
                .iter()
                .zip(&functions[k])
                .zip(weights)
                .map(|((d, f), w)| d * f * w)
                .sum();
            for (r, f) in remainder.iter_mut().zip(&functions[k]) {
                *r -= coef * f;
            }
            sum += coef * coef / (values[k] * values[k]);
        }
        let residual = remainder
            .iter()
            .zip(weights)
            .map(|(r, w)| r * r * w)
            .sum::<f64>()
            .sqrt();
        if residual > RANGE_TOL * norm2.sqrt().max(1.0) {
            return Err(Error::Range { residual });
        }
        Ok(sum)
    }

    /// `C(x1, x2)`: Picard sum of the density ratio against the `V`-side
    /// singular functions of `A_{x1}`.
    pub fn picard_constant(&self, x1: usize, x2: usize) -> Result<f64> {
        self.check_x(x2)?;
        let ratio = self.density_ratio(x1, x2)?;
        let sys = self.singular_system(x1)?;
        Self::picard_sum(&sys.values, sys.nonzero(), &sys.v_functions, &sys.v_weights, &ratio)
    }

    /// `D(x)`: Picard sum of `E[Y | x, Z]` against the `Z`-side singular
    /// functions of `A_x`.
    pub fn dual_picard_constant(&self, x: usize) -> Result<f64> {
        let sys = self.singular_system(x)?;
        let g: Vec<f64> = (0..self.nz).map(|z| self.ey(x, z)).collect();
        Self::picard_sum(&sys.values, sys.nonzero(), &sys.z_functions, &sys.z_weights, &g)
    }

    /// Minimal-norm least-squares `gamma(x, .)` with
    /// `sum_v gamma(v) p(v | x, z) = E[Y | x, z]` for every `z`.
    pub fn solve_gamma(&self, x: usize) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let (m, pz, pv) = self.operator_matrix(x);
        let rhs = DVector::from_fn(self.nz, |z, _| pz[z].sqrt() * self.ey(x, z));
        let svd = SVD::new(m, true, true);
        let top = svd.singular_values.max();
        let coords = svd
            .solve(&rhs, ZERO_SINGULAR * top)
            .map_err(|e| Error::Identification(e.to_string()))?;
        let gamma: Vec<f64> = coords
            .iter()
            .zip(&pv)
            .map(|(c, p)| if *p > 0.0 { c / p.sqrt() } else { 0.0 })
            .collect();

        let mut worst = 0.0f64;
        for z in 0..self.nz {
            if pz[z] == 0.0 {
                continue;
            }
            let fitted: f64 = self.p_v_given_xz(x, z).iter().zip(&gamma).map(|(p, g)| p * g).sum();
            worst = worst.max((fitted - self.ey(x, z)).abs());
        }
        if worst > SOLVE_TOL {
            return Err(Error::Identification(format!(
                "no gamma solves the moment condition at x={x} (residual {worst:e})"
            )));
        }
        Ok(gamma)
    }

    pub fn casf_via_gamma(&self, x1: usize, x2: usize) -> Result<f64> {
        self.check_x(x2)?;
        let gamma = self.solve_gamma(x1)?;
        Ok(self.average_over_v(&gamma, x2))
    }

    /// Minimal-norm `phi` with `sum_z phi(z) p(z | x1, v) = p(v | x2) / p(v | x1)`.
    ///
    /// Solved as `phi = W^-1 K' (K W^-1 K')^+ r` with `W = diag p(z | x1)`,
    /// through a symmetric eigendecomposition; independent of the SVD used by
    /// [`ObservableLaw::picard_constant`].
    pub fn solve_phi(&self, x1: usize, x2: usize) -> Result<Vec<f64>> {
        self.check_x(x1)?;
        self.check_x(x2)?;
        let ratio = self.density_ratio(x1, x2)?;
        let pz = self.p_z_given_x(x1);
        let pv = self.p_v_given_x(x1);
        let live_v: Vec<usize> = (0..self.nv).filter(|&v| pv[v] > 0.0).collect();
        let live_z: Vec<usize> = (0..self.nz).filter(|&z| pz[z] > 0.0).collect();

        // K[v][z] = p(z | x1, v), restricted to the support.
        let k = DMatrix::from_fn(live_v.len(), live_z.len(), |i, j| {
            self.p_z_given_xv(x1, live_v[i])[live_z[j]]
        });
        // Minimal weighted-norm solution: phi = W^{-1/2} u with u the
        // minimal-norm solution of K W^{-1/2} u = r.
        let scale = DVector::from_iterator(live_z.len(), live_z.iter().map(|&z| 1.0 / pz[z].sqrt()));
        let mut kw = k;
        for (j, s) in scale.iter().enumerate() {
            kw.column_mut(j).scale_mut(*s);
        }
        let svd = kw.svd(true, true);
        let top = svd.singular_values.max();
        let r = DVector::from_iterator(live_v.len(), live_v.iter().map(|&v| ratio[v]));
        let (u, vt) = (svd.u.expect("left vectors"), svd.v_t.expect("right vectors"));
        let mut rotated = u.tr_mul(&r);
        for (i, &sv) in svd.singular_values.iter().enumerate() {
            rotated[i] = if sv > ZERO_SINGULAR * top { rotated[i] / sv } else { 0.0 };
        }
        let phi_live = (vt.tr_mul(&rotated)).component_mul(&scale);

        let mut phi = vec![0.0; self.nz];
        for (j, &z) in live_z.iter().enumerate() {
            phi[z] = phi_live[j];
        }
        let worst = live_v
            .iter()
            .map(|&v| {
                let fitted: f64 = self.p_z_given_xv(x1, v).iter().zip(&phi).map(|(p, f)| p * f).sum();
                (fitted - ratio[v]).abs()
            })
            .fold(0.0f64, f64::max);
        if worst > SOLVE_TOL {
            return Err(Error::Identification(format!(
                "no phi solves the density-ratio equation at (x1={x1}, x2={x2}) (residual {worst:e})"
            )));
        }
        Ok(phi)
    }

    pub fn casf_via_phi(&self, x1: usize, x2: usize) -> Result<f64> {
        let phi = self.solve_phi(x1, x2)?;
        Ok(self.weighted_outcome(&phi, x1))
    }

    /// `E[f(Z)^2 | X = x]`.
    pub fn z_norm2(&self, f: &[f64], x: usize) -> f64 {
        self.p_z_given_x(x).iter().zip(f).map(|(p, v)| p * v * v).sum()
    }
}

/// Empirical observable law of a dataset with scalar discrete `x`, `z`, `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTable {
    pub law: ObservableLaw,
    pub x_levels: Vec<f64>,
    pub z_levels: Vec<f64>,
    pub v_levels: Vec<f64>,
}

impl EmpiricalTable {
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        if data.x.ncols() != 1 || data.z.ncols() != 1 || data.v.ncols() != 1 {
            return Err(Error::Dimension("empirical tables need scalar x, z and v".into()));
        }
        let levels = |col: &[f64]| {
            let mut l: Vec<f64> = col.iter().map(|&v| v + 0.0).collect();
            l.sort_by(f64::total_cmp);
            l.dedup();
            l
        };
        let xs: Vec<f64> = data.x.column(0).iter().copied().collect();
        let zs: Vec<f64> = data.z.column(0).iter().copied().collect();
        let vs: Vec<f64> = data.v.column(0).iter().copied().collect();
        let (x_levels, z_levels, v_levels) = (levels(&xs), levels(&zs), levels(&vs));
        let (nx, nz, nv) = (x_levels.len(), z_levels.len(), v_levels.len());
        let index = |levels: &[f64], value: f64| {
            levels
                .binary_search_by(|l| l.total_cmp(&(value + 0.0)))
                .expect("level taken from the same data")
        };
        let n = data.n() as f64;
        let mut p_xzv = vec![0.0; nx * nz * nv];
        let mut y_sum = vec![0.0; nx * nz];
        let mut counts = vec![0usize; nx * nz];
        for i in 0..data.n() {
            let (x, z, v) = (index(&x_levels, xs[i]), index(&z_levels, zs[i]), index(&v_levels, vs[i]));
            p_xzv[(x * nz + z) * nv + v] += 1.0 / n;
            y_sum[x * nz + z] += data.y[i];
            counts[x * nz + z] += 1;
        }
        let ey_xz = y_sum
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        Ok(Self {
            law: ObservableLaw { nx, nz, nv, p_xzv, ey_xz },
            x_levels,
            z_levels,
            v_levels,
        })
    }

    pub fn x_index(&self, value: f64) -> Option<usize> {
        self.x_levels.binary_search_by(|l| l.total_cmp(&(value + 0.0))).ok()
    }
}

fn check_pmf(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(format!("{what}: pmf entries must be finite and >= 0")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PMF_TOL {
        return Err(Error::InvalidArgument(format!("{what}: pmf sums to {total}, not 1")));
    }
    Ok(())
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.into_iter().map(|x| x / total).collect()
    } else {
        v
    }
}

fn numerical_rank(m: &DMatrix<f64>, cutoff: f64) -> usize {
    let sv = m.singular_values();
    let top = sv.max();
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > cutoff * top).count()
}

/// Seeded battery over random complete models: both identification routes
/// against the direct CASF, both well-posedness inequalities on random
/// candidate functions, and the minimal-norm characterization of `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "default_suite_models")]
    pub models: usize,
    #[serde(default)]
    pub seed: u64,
    /// Random candidate functions per model for the inequality checks.
    #[serde(default = "default_suite_probes")]
    pub probes: usize,
    #[serde(default = "default_suite_floor")]
    pub floor: f64,
}

fn default_suite_models() -> usize {
    100
}

fn default_suite_probes() -> usize {
    20
}

fn default_suite_floor() -> f64 {
    0.02
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            models: default_suite_models(),
            seed: 0,
            probes: default_suite_probes(),
            floor: default_suite_floor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCheck {
    pub name: String,
    pub pass: bool,
    /// Largest error (or largest `lhs - rhs` for inequalities).
    pub worst: f64,
    pub tolerance: f64,
    pub evaluated: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    /// Draws discarded for failing completeness.
    pub rejected_models: usize,
    pub checks: Vec<SuiteCheck>,
    pub pass: bool,
}

/// Random models with `nw, nx` in `{2, 3}` and `nz = nv = nw + 1` that pass
/// completeness on both sides at every treatment level.
pub fn random_complete_models<R: Rng>(rng: &mut R, count: usize, floor: f64) -> (Vec<DiscreteModel>, usize) {
    let mut out = Vec::with_capacity(count);
    let mut rejected = 0;
    while out.len() < count {
        let nw = rng.gen_range(2..=3);
        let nx = rng.gen_range(2..=3);
        let m = random_model(rng, nw, nx, nw + 1, nw + 1, floor);
        if (0..nx).all(|x| m.completeness_check(x, Side::V).pass && m.completeness_check(x, Side::Z).pass) {
            out.push(m);
        } else {
            rejected += 1;
        }
    }
    (out, rejected)
}

#[derive(Default)]
struct Tally {
    worst: f64,
    evaluated: usize,
    errors: usize,
}

impl Tally {
    fn record(&mut self, value: Result<f64>) {
        match value {
            Ok(v) if v.is_finite() => {
                self.worst = if self.evaluated == 0 { v } else { self.worst.max(v) };
                self.evaluated += 1;
            }
            _ => self.errors += 1,
        }
    }

    fn finish(self, name: &str, tolerance: f64) -> SuiteCheck {
        SuiteCheck {
            name: name.to_string(),
            pass: self.errors == 0 && self.evaluated > 0 && self.worst < tolerance,
            worst: self.worst,
            tolerance,
            evaluated: self.evaluated,
            errors: self.errors,
        }
    }
}

pub fn oracle_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    if config.models == 0 || !(config.floor > 0.0 && config.floor < 0.25) {
        return Err(Error::InvalidArgument("oracle suite needs models >= 1 and floor in (0, 0.25)".into()));
    }
    let mut rng = crate::exec::stream_rng(config.seed, 0);
    let (models, rejected_models) = random_complete_models(&mut rng, config.models, config.floor);
    let mut probe_rng = crate::exec::stream_rng(config.seed, 1);
    let (mut gamma, mut phi, mut picard) = (Tally::default(), Tally::default(), Tally::default());
    let (mut primal, mut dual) = (Tally::default(), Tally::default());
    for m in &models {
        let law = m.observables();
        for x1 in 0..m.nx() {
            for x2 in 0..m.nx() {
                let truth = m.true_casf(x1, x2);
                gamma.record(m.casf_via_gamma(x1, x2).map(|v| (v - truth).abs()));
                phi.record(m.casf_via_phi(x1, x2).map(|v| (v - truth).abs()));
                picard.record(
                    m.solve_phi(x1, x2)
                        .and_then(|f| Ok((law.z_norm2(&f, x1) - m.picard_constant(x1, x2)?).abs())),
                );
            }
        }
        for _ in 0..config.probes {
            let x1 = probe_rng.gen_range(0..m.nx());
            let x2 = probe_rng.gen_range(0..m.nx());
            let g: Vec<f64> = (0..m.nv()).map(|_| probe_rng.gen_range(-3.0..3.0)).collect();
            let f: Vec<f64> = (0..m.nz()).map(|_| probe_rng.gen_range(-3.0..3.0)).collect();
            primal.record(m.wellposedness_check(x1, x2, &g).map(|r| r.lhs - r.rhs));
            dual.record(m.dual_wellposedness_check(x1, x2, &f).map(|r| r.lhs - r.rhs));
        }
    }
    let checks = vec![
        gamma.finish("gamma_route_matches_direct", SOLVE_TOL),
        phi.finish("phi_route_matches_direct", SOLVE_TOL),
        primal.finish("wellposedness", SOLVE_TOL),
        dual.finish("dual_wellposedness", SOLVE_TOL),
        picard.finish("picard_equals_min_norm_phi", SOLVE_TOL),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(SuiteReport {
        config: config.clone(),
        rejected_models,
        checks,
        pass,
    })
}
