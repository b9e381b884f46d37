//! Sieve bases: multivariate power series, saturated indicator bases for
//! finite discrete inputs, row-wise Kronecker products and column
//! standardization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    PowerSeries,
    IndicatorSaturated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub input_dim: usize,
    pub max_total_degree: usize,
    pub kind: BasisKind,
    pub standardize: bool,
}

impl BasisSpec {
    pub fn power_series(input_dim: usize, max_total_degree: usize) -> Self {
        Self {
            input_dim,
            max_total_degree,
            kind: BasisKind::PowerSeries,
            standardize: true,
        }
    }

    pub fn indicator(input_dim: usize) -> Self {
        Self {
            input_dim,
            max_total_degree: 0,
            kind: BasisKind::IndicatorSaturated,
            standardize: false,
        }
    }

    /// Number of power-series columns, `C(dim + degree, degree)`.
    pub fn monomial_count(&self) -> usize {
        binomial(self.input_dim + self.max_total_degree, self.max_total_degree)
    }

    pub(crate) fn validate(&self, what: &str) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument(format!("{what}: input_dim must be >= 1")));
        }
        if self.kind == BasisKind::IndicatorSaturated && self.standardize {
            return Err(Error::InvalidArgument(format!(
                "{what}: indicator_saturated bases carry no intercept and cannot be standardized"
            )));
        }
        Ok(())
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// All exponent vectors `a` with `sum(a) <= max_degree`, in graded
/// lexicographic order. The first entry is the zero vector.
pub fn enumerate_monomials(dim: usize, max_degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; dim];
    for degree in 0..=max_degree {
        compositions(degree as u32, 0, &mut current, &mut out);
    }
    out
}

// Fills positions `pos..` of `current` with every split of `remaining`,
// larger leading exponents first.
fn compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for head in (0..=remaining).rev() {
        current[pos] = head;
        compositions(remaining - head, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// Labels of the columns of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisColumns {
    Monomials(Vec<Vec<u32>>),
    Support(Vec<Vec<f64>>),
}

impl BasisColumns {
    pub fn len(&self) -> usize {
        match self {
            BasisColumns::Monomials(m) => m.len(),
            BasisColumns::Support(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, keep: &[usize]) -> Self {
        match self {
            BasisColumns::Monomials(m) => {
                BasisColumns::Monomials(keep.iter().map(|&j| m[j].clone()).collect())
            }
            BasisColumns::Support(s) => {
                BasisColumns::Support(keep.iter().map(|&j| s[j].clone()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub spec: BasisSpec,
    pub columns: BasisColumns,
}

impl DesignMatrix {
    pub fn intercept_index(&self) -> Option<usize> {
        match &self.columns {
            BasisColumns::Monomials(m) => m.iter().position(|a| a.iter().all(|&e| e == 0)),
            BasisColumns::Support(_) => None,
        }
    }
}

/// A basis whose columns are fixed. For saturated bases the support is
/// learned from the points passed to [`Basis::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    spec: BasisSpec,
    columns: BasisColumns,
}

impl Basis {
    pub fn new(spec: &BasisSpec, training: &DMatrix<f64>) -> Result<Self> {
        spec.validate("basis")?;
        check_points(training, spec.input_dim)?;
        let columns = match spec.kind {
            BasisKind::PowerSeries => {
                BasisColumns::Monomials(enumerate_monomials(spec.input_dim, spec.max_total_degree))
            }
            BasisKind::IndicatorSaturated => BasisColumns::Support(support_points(training)),
        };
        Ok(Self {
            spec: spec.clone(),
            columns,
        })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn columns(&self) -> &BasisColumns {
        &self.columns
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn intercept_index(&self) -> Option<usize> {
        match &self.columns {
            BasisColumns::Monomials(_) => Some(0),
            BasisColumns::Support(_) => None,
        }
    }

    /// Writes the basis row for `point` into `out` (length `width()`).
    pub fn evaluate_into(&self, point: &[f64], out: &mut [f64]) -> Result<()> {
        if point.len() != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "point has dimension {}, basis expects {}",
                point.len(),
                self.spec.input_dim
            )));
        }
        if point.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("basis input".into()));
        }
        match &self.columns {
            BasisColumns::Monomials(exps) => {
                for (slot, a) in out.iter_mut().zip(exps) {
                    *slot = a
                        .iter()
                        .zip(point)
                        .map(|(&e, &p)| p.powi(e as i32))
                        .product();
                }
            }
            BasisColumns::Support(support) => {
                let key: Vec<f64> = point.iter().map(|&v| v + 0.0).collect();
                let hit = support
                    .binary_search_by(|s| lex_cmp(s, &key))
                    .map_err(|_| Error::UnseenLevel {
                        value: point.to_vec(),
                    })?;
                out.iter_mut().for_each(|s| *s = 0.0);
                out[hit] = 1.0;
            }
        }
        Ok(())
    }

    pub fn evaluate_point(&self, point: &[f64]) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.width()];
        self.evaluate_into(point, &mut row)?;
        Ok(row)
    }

    pub fn evaluate(&self, points: &DMatrix<f64>) -> Result<DesignMatrix> {
        check_points(points, self.spec.input_dim)?;
        let width = self.width();
        let mut values = DMatrix::zeros(points.nrows(), width);
        let mut point = vec![0.0; points.ncols()];
        let mut row = vec![0.0; width];
        for i in 0..points.nrows() {
            for (k, p) in point.iter_mut().enumerate() {
                *p = points[(i, k)];
            }
            self.evaluate_into(&point, &mut row)?;
            for (j, &r) in row.iter().enumerate() {
                values[(i, j)] = r;
            }
        }
        Ok(DesignMatrix {
            values,
            spec: self.spec.clone(),
            columns: self.columns.clone(),
        })
    }
}

/// One-shot evaluation; a saturated basis takes its support from `points`.
pub fn evaluate_basis(points: &DMatrix<f64>, spec: &BasisSpec) -> Result<DesignMatrix> {
    Basis::new(spec, points)?.evaluate(points)
}

fn check_points(points: &DMatrix<f64>, dim: usize) -> Result<()> {
    if points.ncols() != dim {
        return Err(Error::Dimension(format!(
            "points have {} columns, basis expects {}",
            points.ncols(),
            dim
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("basis input".into()));
    }
    Ok(())
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn support_points(points: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = points
        .row_iter()
        .map(|r| r.iter().map(|&v| v + 0.0).collect())
        .collect();
    rows.sort_by(|a, b| lex_cmp(a, b));
    rows.dedup();
    rows
}

/// Row-wise Kronecker product. Column `a * l + b` (0-based) of the output is
/// `A[:, a] * B[:, b]`, where `l = B.ncols()`.
pub fn kron_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "kron_rows: {} rows vs {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let (k, l) = (a.ncols(), b.ncols());
    Ok(DMatrix::from_fn(a.nrows(), k * l, |i, j| {
        a[(i, j / l)] * b[(i, j % l)]
    }))
}

/// Kronecker product of two vectors with the same layout as [`kron_rows`].
pub fn kron_vec(a: &[f64], b: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
}

/// Maps a flat Kronecker column back to its `(a, b)` pair.
pub fn kron_split(index: usize, l: usize) -> (usize, usize) {
    (index / l, index % l)
}

/// Centers and scales design columns using divisor `n`. The intercept passes
/// through unchanged; zero-variance columns are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub column_means: Vec<f64>,
    pub column_sds: Vec<f64>,
    pub dropped_columns: Vec<usize>,
    /// Intercept position in the input layout.
    pub intercept_index: Option<usize>,
    kept: Vec<usize>,
}

impl Standardizer {
    pub fn fit(design: &DMatrix<f64>, intercept: Option<usize>) -> Result<Self> {
        let n = design.nrows();
        if n == 0 || design.ncols() == 0 {
            return Err(Error::InvalidArgument("cannot standardize an empty design".into()));
        }
        let mut means = Vec::with_capacity(design.ncols());
        let mut sds = Vec::with_capacity(design.ncols());
        for col in design.column_iter() {
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            means.push(mean);
            sds.push(var.sqrt());
        }
        Self::from_moments(means, sds, intercept)
    }

    /// Builds a standardizer from precomputed column means and sds.
    pub fn from_moments(means: Vec<f64>, sds: Vec<f64>, intercept: Option<usize>) -> Result<Self> {
        let mut dropped = Vec::new();
        let mut kept = Vec::new();
        for (j, (&m, &s)) in means.iter().zip(&sds).enumerate() {
            if Some(j) == intercept {
                kept.push(j);
            } else if s <= 1e-12 * (1.0 + m.abs()) {
                dropped.push(j);
            } else {
                kept.push(j);
            }
        }
        if intercept.is_none() && kept.is_empty() {
            return Err(Error::NothingEstimable);
        }
        Ok(Self {
            column_means: means,
            column_sds: sds,
            dropped_columns: dropped,
            intercept_index: intercept,
            kept,
        })
    }

    pub fn input_width(&self) -> usize {
        self.column_means.len()
    }

    pub fn output_width(&self) -> usize {
        self.kept.len()
    }

    /// Intercept position in the output layout.
    pub fn output_intercept(&self) -> Option<usize> {
        self.intercept_index
            .and_then(|i| self.kept.iter().position(|&j| j == i))
    }

    pub fn kept_columns(&self) -> &[usize] {
        &self.kept
    }

    pub fn apply_row(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.kept.iter().map(|&j| {
            if Some(j) == self.intercept_index {
                row[j]
            } else {
                (row[j] - self.column_means[j]) / self.column_sds[j]
            }
        }));
    }

    pub fn apply(&self, design: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if design.ncols() != self.input_width() {
            return Err(Error::Dimension(format!(
                "standardizer fitted on {} columns, got {}",
                self.input_width(),
                design.ncols()
            )));
        }
        Ok(DMatrix::from_fn(design.nrows(), self.kept.len(), |i, c| {
            let j = self.kept[c];
            if Some(j) == self.intercept_index {
                design[(i, j)]
            } else {
                (design[(i, j)] - self.column_means[j]) / self.column_sds[j]
            }
        }))
    }
}

pub fn fit_standardizer(design: &DesignMatrix) -> Result<Standardizer> {
    Standardizer::fit(&design.values, design.intercept_index())
}

pub fn apply_standardizer(std: &Standardizer, design: &DesignMatrix) -> Result<DesignMatrix> {
    Ok(DesignMatrix {
        values: std.apply(&design.values)?,
        spec: design.spec.clone(),
        columns: design.columns.select(std.kept_columns()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn monomial_examples() {
        let one = enumerate_monomials(1, 5);
        assert_eq!(one, (0..=5).map(|e| vec![e]).collect::<Vec<_>>());
        let two = enumerate_monomials(2, 2);
        assert_eq!(
            two,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        assert_eq!(enumerate_monomials(3, 5).len(), 56);
    }

    #[test]
    fn evaluate_examples() {
        let p = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
        let d = evaluate_basis(&p, &BasisSpec::power_series(2, 1)).unwrap();
        assert_eq!(d.values.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);

        let p = DMatrix::from_row_slice(1, 1, &[2.0]);
        let d = evaluate_basis(&p, &BasisSpec::power_series(1, 3)).unwrap();
        assert_eq!(d.values.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 4.0, 8.0]);

        let p = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let d = evaluate_basis(&p, &BasisSpec::power_series(2, 4)).unwrap();
        assert_eq!(d.values[(0, 0)], 1.0);
        assert!(d.values.row(0).iter().skip(1).all(|&v| v == 0.0));
    }

    #[test]
    fn indicator_basis() {
        let train = DMatrix::from_row_slice(4, 1, &[2.0, 0.0, 1.0, 2.0]);
        let basis = Basis::new(&BasisSpec::indicator(1), &train).unwrap();
        assert_eq!(basis.width(), 3);
        assert_eq!(basis.evaluate_point(&[1.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(matches!(
            basis.evaluate_point(&[5.0]),
            Err(Error::UnseenLevel { .. })
        ));
    }

    #[test]
    fn rejects_non_finite_and_bad_width() {
        let p = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(
            evaluate_basis(&p, &BasisSpec::power_series(1, 2)),
            Err(Error::NonFinite(_))
        ));
        let p = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(matches!(
            evaluate_basis(&p, &BasisSpec::power_series(1, 2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn kron_examples() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let k = kron_rows(&a, &b).unwrap();
        assert_eq!(k.row(0).iter().copied().collect::<Vec<_>>(), vec![3.0, 4.0, 6.0, 8.0]);

        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let ones = DMatrix::from_element(2, 1, 1.0);
        assert_eq!(kron_rows(&a, &ones).unwrap(), a);

        let b = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(kron_rows(&a, &b).unwrap().ncols(), 6);

        let c = DMatrix::from_element(3, 2, 1.0);
        assert!(kron_rows(&a, &c).is_err());
    }

    #[test]
    fn standardizer_examples() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 2.0]);
        let s = Standardizer::fit(&d, Some(0)).unwrap();
        let out = s.apply(&d).unwrap();
        assert_eq!(out.column(1).iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0]);
        assert_eq!(out.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);

        let d = DMatrix::from_row_slice(3, 3, &[1.0, 5.0, 1.0, 1.0, 5.0, 2.0, 1.0, 5.0, 4.0]);
        let s = Standardizer::fit(&d, Some(0)).unwrap();
        assert_eq!(s.dropped_columns, vec![1]);
        assert_eq!(s.output_width(), 2);
        assert_eq!(s.output_intercept(), Some(0));

        let d = DMatrix::from_element(3, 2, 7.0);
        assert!(matches!(Standardizer::fit(&d, None), Err(Error::NothingEstimable)));
    }

    #[test]
    fn standardized_training_design_has_unit_moments() {
        let pts = DMatrix::from_fn(50, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 3.0 - 1.0);
        let design = evaluate_basis(&pts, &BasisSpec::power_series(2, 3)).unwrap();
        let std = fit_standardizer(&design).unwrap();
        let out = apply_standardizer(&std, &design).unwrap();
        let icpt = std.output_intercept().unwrap();
        for (j, col) in out.values.column_iter().enumerate() {
            if j == icpt {
                assert!(col.iter().all(|&v| v == 1.0));
                continue;
            }
            let mean = col.sum() / 50.0;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0).sqrt();
            assert!(mean.abs() < 1e-12);
            assert!((sd - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn column_count_is_binomial(dim in 1usize..=4, degree in 0usize..=6) {
            let spec = BasisSpec::power_series(dim, degree);
            prop_assert_eq!(enumerate_monomials(dim, degree).len(), spec.monomial_count());
            prop_assert_eq!(spec.monomial_count(), binomial(dim + degree, degree));
        }

        #[test]
        fn kron_index_layout_round_trips(k in 1usize..8, l in 1usize..8) {
            let mut seen = vec![false; k * l];
            for a in 0..k {
                for b in 0..l {
                    let flat = a * l + b;
                    prop_assert_eq!(kron_split(flat, l), (a, b));
                    seen[flat] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
        }

        #[test]
        fn evaluation_distributes_over_concatenation(
            a in proptest::collection::vec(-2.0f64..2.0, 2..12),
            b in proptest::collection::vec(-2.0f64..2.0, 2..12),
        ) {
            let ra = a.len() / 2;
            let rb = b.len() / 2;
            let ma = DMatrix::from_row_slice(ra, 2, &a[..ra * 2]);
            let mb = DMatrix::from_row_slice(rb, 2, &b[..rb * 2]);
            let both = DMatrix::from_fn(ra + rb, 2, |i, j| if i < ra { ma[(i, j)] } else { mb[(i - ra, j)] });
            let basis = Basis::new(&BasisSpec::power_series(2, 3), &both).unwrap();
            let ea = basis.evaluate(&ma).unwrap().values;
            let eb = basis.evaluate(&mb).unwrap().values;
            let eboth = basis.evaluate(&both).unwrap().values;
            for i in 0..ra + rb {
                for j in 0..eboth.ncols() {
                    let part = if i < ra { ea[(i, j)] } else { eb[(i - ra, j)] };
                    prop_assert_eq!(part, eboth[(i, j)]);
                }
            }
        }
    }
}
