//! Generalized cross-validation for the first-stage ridge regressions.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::ridge::{solve_penalized, Moments, SingularPolicy};

/// Log-spaced candidate penalties, `1e-8 ..= 1e2`.
pub fn candidate_grid() -> Vec<f64> {
    (0..=40).map(|i| 10f64.powf(-8.0 + 0.25 * i as f64)).collect()
}

/// GCV score `(RSS / n) / (1 - df / n)^2`, summed over targets, with
/// `df = tr((G + lambda D)^-1 G)`. Returns `None` when `df >= n`.
pub fn gcv_score(
    moments: &Moments,
    yy: f64,
    lambda: f64,
    mask: &[bool],
    policy: SingularPolicy,
) -> Result<Option<f64>> {
    let coef = solve_penalized(&moments.gram, &moments.cross, lambda, mask, policy)?;
    let n = moments.n as f64;
    // RSS / n = Y'Y/n - 2 tr(C' X'Y/n) + tr(C' G C)
    let fit_cross = (coef.transpose() * &moments.cross).trace();
    let fit_quad = (coef.transpose() * &moments.gram * &coef).trace();
    let rss = (yy - 2.0 * fit_cross + fit_quad).max(0.0);
    let df = solve_penalized(&moments.gram, &moments.gram, lambda, mask, policy)?.trace();
    if df >= n {
        return Ok(None);
    }
    Ok(Some(rss / (1.0 - df / n).powi(2)))
}

/// Penalty minimizing the GCV score over [`candidate_grid`].
pub fn select_lambda(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    mask: &[bool],
    policy: SingularPolicy,
) -> Result<f64> {
    let moments = Moments::from_data(features, targets)?;
    let yy = targets.iter().map(|v| v * v).sum::<f64>() / moments.n as f64;
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = None;
    for lambda in candidate_grid() {
        match gcv_score(&moments, yy, lambda, mask, policy) {
            Ok(Some(score)) => {
                if best.map_or(true, |(_, s)| score < s) {
                    best = Some((lambda, score));
                }
            }
            Ok(None) => {}
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((lambda, _)), _) => Ok(lambda),
        (None, Some(e)) => Err(e),
        // Every candidate saturates the degrees of freedom.
        (None, None) => Ok(*candidate_grid().last().expect("non-empty grid")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moment_rss_matches_direct_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(40, 4, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(40, 2, |_, _| rng.gen_range(-1.0..1.0));
        let mask = [true; 4];
        let lambda = 0.05;
        let moments = Moments::from_data(&x, &y).unwrap();
        let yy = y.iter().map(|v| v * v).sum::<f64>() / 40.0;
        let score = gcv_score(&moments, yy, lambda, &mask, SingularPolicy::Error)
            .unwrap()
            .unwrap();

        let system = x.tr_mul(&x) / 40.0 + DMatrix::identity(4, 4) * lambda;
        let inv = system.try_inverse().unwrap();
        let hat = &x * &inv * x.transpose() / 40.0;
        let resid = &y - &hat * &y;
        let rss = resid.iter().map(|v| v * v).sum::<f64>() / 40.0;
        let df = hat.trace();
        let direct = rss / (1.0 - df / 40.0).powi(2);
        assert!((score - direct).abs() < 1e-10);
    }

    #[test]
    fn prefers_small_penalty_for_clean_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(200, 3, |_, j| if j == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
        let y = DMatrix::from_fn(200, 1, |i, _| 2.0 * x[(i, 1)] - x[(i, 2)] + 0.01 * rng.gen_range(-1.0..1.0));
        let lambda = select_lambda(&x, &y, &[false, true, true], SingularPolicy::Error).unwrap();
        assert!(lambda < 1e-3);
    }
}
