//! Reference forecasters: the frozen (instantaneous) field and k nearest days.

use serde::{Deserialize, Serialize};

use crate::domain::{DaySet, SensorLayout, TimeGrid};
use crate::error::{DlmError, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::traveltime::GriddedField;

/// Field whose `extent` columns, starting at grid index `now_index`, all equal
/// `v_now`. Column times may run past the end of the grid.
pub fn instantaneous_field<T: Real>(
    v_now: &[T],
    layout: &SensorLayout<T>,
    grid: &TimeGrid,
    now_index: usize,
    extent: usize,
) -> Result<GriddedField<T>> {
    if extent < 2 {
        return Err(DlmError::Parameter(format!(
            "instantaneous field needs an extent of at least 2 columns, got {extent}"
        )));
    }
    check_vector(v_now, layout.len())?;
    let values = Matrix::from_fn(v_now.len(), extent, |i, _| v_now[i]);
    GriddedField::on_grid(grid, now_index, layout, values)
}

fn check_vector<T: Real>(v: &[T], m: usize) -> Result<()> {
    if v.len() != m {
        return Err(DlmError::Dimension(format!("velocity vector has {} entries, layout has {m}", v.len())));
    }
    if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x > T::zero())) {
        return Err(DlmError::Data(format!("speeds must be finite and positive, got {x}")));
    }
    Ok(())
}

/// Which time indices enter the neighbor distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceWindow {
    /// Day start through the current index.
    #[default]
    Full,
    /// The last `n` indices up to and including the current one.
    Trailing(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub neighbors: usize,
    pub window: DistanceWindow,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            neighbors: 1,
            window: DistanceWindow::Full,
        }
    }
}

/// Indices of the chosen neighbors, nearest first. Equal distances keep the
/// earlier day.
pub fn nearest_days<T: Real>(train: &DaySet<T>, partial: &Matrix<T>, cfg: &KnnConfig) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(DlmError::Data("k-NN needs a non-empty training set".into()));
    }
    if cfg.neighbors == 0 || cfg.neighbors > train.len() {
        return Err(DlmError::Parameter(format!(
            "k-NN neighbor count must be in 1..={}, got {}",
            train.len(),
            cfg.neighbors
        )));
    }
    let m = train.layout().len();
    let steps = train.grid().num_steps();
    if partial.rows() != m || partial.cols() == 0 || partial.cols() > steps {
        return Err(DlmError::Dimension(format!(
            "partial day is {}x{}, expected {m} rows and 1..={steps} columns",
            partial.rows(),
            partial.cols()
        )));
    }
    let k = partial.cols() - 1;
    let first = match cfg.window {
        DistanceWindow::Full => 0,
        DistanceWindow::Trailing(0) => {
            return Err(DlmError::Parameter("trailing k-NN window must be at least 1 index".into()));
        }
        DistanceWindow::Trailing(n) => (k + 1).saturating_sub(n),
    };
    let mut scored: Vec<(T, usize)> = train
        .days()
        .iter()
        .enumerate()
        .map(|(d, day)| {
            let v = day.values();
            let mut sq = T::zero();
            for i in 0..m {
                for j in first..=k {
                    let e = v[(i, j)] - partial[(i, j)];
                    sq = sq + e * e;
                }
            }
            (sq.sqrt(), d)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(cfg.neighbors).map(|(_, d)| d).collect())
}

/// Mean of the neighbors' columns `k + 1 ..= until`, where `k` is the last
/// column of `partial`.
pub(crate) fn knn_forecast<T: Real>(
    train: &DaySet<T>,
    partial: &Matrix<T>,
    until: usize,
    cfg: &KnnConfig,
) -> Result<Matrix<T>> {
    let mut chosen = nearest_days(train, partial, cfg)?;
    let k = partial.cols() - 1;
    train.grid().check_index(until)?;
    if until <= k {
        return Err(DlmError::Range(format!("forecast end {until} must follow the current index {k}")));
    }
    // sum in day-id order so the mean does not depend on training-set order
    chosen.sort_by(|&a, &b| train.days()[a].day_id().cmp(train.days()[b].day_id()));
    let n = T::of_usize(chosen.len());
    let m = partial.rows();
    Ok(Matrix::from_fn(m, until - k, |i, j| {
        let s = chosen.iter().fold(T::zero(), |acc, &d| acc + train.days()[d].values()[(i, k + 1 + j)]);
        s / n
    }))
}

/// k-NN forecast of the rest of the day, grid indices `k + 1 ..= K`.
pub fn knn_predict<T: Real>(train: &DaySet<T>, partial: &Matrix<T>, cfg: &KnnConfig) -> Result<GriddedField<T>> {
    let last = train.grid().last_index();
    if partial.cols() + 1 > last {
        return Err(DlmError::Range(format!(
            "a k-NN field needs at least 2 remaining indices; current index {} of {last}",
            partial.cols().saturating_sub(1)
        )));
    }
    let values = knn_forecast(train, partial, last, cfg)?;
    GriddedField::on_grid(train.grid(), partial.cols(), train.layout(), values)
}
