//! Proxy controls built from panel histories.
//!
//! With target period `t` and `h = floor(t / 2)`, the predetermined split
//! uses `V = (X_1, .., X_h)` and `Z = (X_h, .., X_{t-1})`; the period-`h`
//! block appears in both. The lagged-outcome split appends `Y_1..Y_h` to `V`
//! and `Y_h..Y_{t-1}` to `Z`. Periods are 1-based throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Dataset;

/// Balanced panel: `n` units observed over `T` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    /// `n x T` outcomes.
    pub y: DMatrix<f64>,
    /// One `n x dx` treatment matrix per period.
    pub x: Vec<DMatrix<f64>>,
    /// Target period, `1 <= t <= T`.
    pub target_period: usize,
    pub unit_ids: Option<Vec<String>>,
}

impl PanelDataset {
    pub fn new(y: DMatrix<f64>, x: Vec<DMatrix<f64>>, target_period: usize) -> Result<Self> {
        let (n, periods) = y.shape();
        if x.len() != periods {
            return Err(Error::Dimension(format!(
                "outcomes cover {periods} periods, treatments cover {}",
                x.len()
            )));
        }
        if periods == 0 || n == 0 {
            return Err(Error::InvalidArgument("empty panel".into()));
        }
        let dx = x[0].ncols();
        if dx == 0 {
            return Err(Error::Dimension("treatments need at least one column".into()));
        }
        for (p, m) in x.iter().enumerate() {
            if m.shape() != (n, dx) {
                return Err(Error::Dimension(format!(
                    "period {} treatments are {}x{}, expected {n}x{dx}",
                    p + 1,
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("treatments in period {}", p + 1)));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("panel outcomes".into()));
        }
        if !(1..=periods).contains(&target_period) {
            return Err(Error::InvalidArgument(format!(
                "target period {target_period} outside 1..={periods}"
            )));
        }
        Ok(Self {
            y,
            x,
            target_period,
            unit_ids: None,
        })
    }

    pub fn with_unit_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::Dimension(format!("{} unit ids for {} units", ids.len(), self.n())));
        }
        self.unit_ids = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn dx(&self) -> usize {
        self.x[0].ncols()
    }

    /// The values of one panel column across units.
    pub fn column(&self, col: PanelColumn) -> Result<DVector<f64>> {
        if !(1..=self.periods()).contains(&col.period) {
            return Err(Error::InvalidArgument(format!("period {} outside the panel", col.period)));
        }
        match col.source {
            Source::Outcome => Ok(self.y.column(col.period - 1).into_owned()),
            Source::Treatment(j) if j < self.dx() => Ok(self.x[col.period - 1].column(j).into_owned()),
            Source::Treatment(j) => Err(Error::InvalidArgument(format!("treatment column {j} out of range"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Treatment component `j` (0-based).
    Treatment(usize),
    Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PanelColumn {
    pub source: Source,
    pub period: usize,
}

/// Which panel columns make up `V` and `Z`, in dataset column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxySplit {
    pub v_columns: Vec<PanelColumn>,
    pub z_columns: Vec<PanelColumn>,
    /// Columns present in both, in `V` order.
    pub shared_columns: Vec<PanelColumn>,
}

fn block(periods: std::ops::RangeInclusive<usize>, dx: usize, outcomes: bool) -> Vec<PanelColumn> {
    let mut cols: Vec<PanelColumn> = periods
        .clone()
        .flat_map(|period| {
            (0..dx).map(move |j| PanelColumn {
                source: Source::Treatment(j),
                period,
            })
        })
        .collect();
    if outcomes {
        cols.extend(periods.map(|period| PanelColumn {
            source: Source::Outcome,
            period,
        }));
    }
    cols
}

fn split(panel: &PanelDataset, outcomes: bool) -> Result<(Dataset, ProxySplit)> {
    let t = panel.target_period;
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "target period {t} has no history; proxies need t >= 2"
        )));
    }
    let h = t / 2;
    let dx = panel.dx();
    let v_columns = block(1..=h, dx, outcomes);
    let z_columns = block(h..=t - 1, dx, outcomes);
    let shared_columns = v_columns.iter().filter(|c| z_columns.contains(c)).copied().collect();
    let gather = |cols: &[PanelColumn]| -> Result<DMatrix<f64>> {
        let columns = cols.iter().map(|&c| panel.column(c)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_columns(&columns))
    };
    let data = Dataset::new(
        panel.y.column(t - 1).into_owned(),
        panel.x[t - 1].clone(),
        gather(&z_columns)?,
        gather(&v_columns)?,
    )?;
    let data = match &panel.unit_ids {
        Some(ids) => data.with_unit_ids(ids.clone())?,
        None => data,
    };
    Ok((
        data,
        ProxySplit {
            v_columns,
            z_columns,
            shared_columns,
        },
    ))
}

/// Proxies from past treatments only.
pub fn split_predetermined(panel: &PanelDataset) -> Result<(Dataset, ProxySplit)> {
    split(panel, false)
}

/// Proxies from past treatments and past outcomes.
pub fn split_with_outcomes(panel: &PanelDataset) -> Result<(Dataset, ProxySplit)> {
    split(panel, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderCondition {
    pub pass: bool,
    pub max_dim: usize,
}

/// Largest latent dimension the split can support:
/// `(floor(t/2) - 1) * (dx + [with_outcomes])`. The factor for vector
/// treatments and outcomes extends the scalar count.
pub fn max_latent_dim(target_period: usize, dx: usize, with_outcomes: bool) -> usize {
    (target_period / 2).saturating_sub(1) * (dx + usize::from(with_outcomes))
}

pub fn order_condition(dim_latent: usize, panel: &PanelDataset, with_outcomes: bool) -> OrderCondition {
    let max_dim = max_latent_dim(panel.target_period, panel.dx(), with_outcomes);
    OrderCondition {
        pass: dim_latent <= max_dim,
        max_dim,
    }
}
