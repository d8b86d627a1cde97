//! Grids, sensor layouts, per-day velocity matrices and period masks.

use std::collections::HashSet;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{DlmError, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Uniform time grid `t_k = start + k * step`, `k = 0..=K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    start_minute: u32,
    step_minutes: u32,
    num_steps: usize,
}

impl TimeGrid {
    pub fn new(start_minute: u32, step_minutes: u32, num_steps: usize) -> Result<Self> {
        if step_minutes == 0 {
            return Err(DlmError::Parameter("step_minutes must be positive".into()));
        }
        if num_steps < 2 {
            return Err(DlmError::Parameter(format!(
                "a time grid needs at least 2 points, got {num_steps}"
            )));
        }
        Ok(Self {
            start_minute,
            step_minutes,
            num_steps,
        })
    }

    /// Grid spanning `start..=end` minutes inclusive.
    pub fn spanning(start_minute: u32, end_minute: u32, step_minutes: u32) -> Result<Self> {
        if step_minutes == 0 || end_minute <= start_minute {
            return Err(DlmError::Parameter(format!(
                "cannot span {start_minute}..={end_minute} with step {step_minutes}"
            )));
        }
        let span = end_minute - start_minute;
        if span % step_minutes != 0 {
            return Err(DlmError::Parameter(format!(
                "span of {span} minutes is not a multiple of the {step_minutes}-minute step"
            )));
        }
        Self::new(start_minute, step_minutes, (span / step_minutes) as usize + 1)
    }

    pub fn start_minute(&self) -> u32 {
        self.start_minute
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    /// Number of grid points, `K + 1`.
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// `K`, the index of the last grid point (and the number of transitions).
    pub fn last_index(&self) -> usize {
        self.num_steps - 1
    }

    /// Clock minute of index `k`. Indices past `K` extrapolate the grid.
    pub fn minute_at<T: Real>(&self, k: usize) -> T {
        T::of(self.start_minute as f64 + k as f64 * self.step_minutes as f64)
    }

    pub fn minute_at_u32(&self, k: usize) -> u32 {
        self.start_minute + k as u32 * self.step_minutes
    }

    pub fn check_index(&self, k: usize) -> Result<()> {
        if k > self.last_index() {
            return Err(DlmError::Index {
                index: k,
                valid: format!("0..={}", self.last_index()),
            });
        }
        Ok(())
    }

    /// Number of whole grid steps in `minutes`, if it is a multiple of the step.
    pub fn steps_in(&self, minutes: u32) -> Option<usize> {
        (minutes % self.step_minutes == 0).then(|| (minutes / self.step_minutes) as usize)
    }
}

impl Default for TimeGrid {
    /// 6 AM to 9 PM in 5-minute steps (181 points).
    fn default() -> Self {
        Self::spanning(6 * 60, 21 * 60, 5).expect("default grid is valid")
    }
}

/// Sensor ids with strictly increasing corridor positions (miles, direction of travel).
///
/// Single-sensor layouts are accepted for scalar models; anything that
/// interpolates in space needs two or more.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout<T> {
    ids: Vec<String>,
    positions: Vec<T>,
}

impl<T: Real> SensorLayout<T> {
    pub fn new(ids: Vec<String>, positions: Vec<T>) -> Result<Self> {
        if ids.len() != positions.len() {
            return Err(DlmError::Dimension(format!(
                "{} sensor ids but {} positions",
                ids.len(),
                positions.len()
            )));
        }
        if positions.is_empty() {
            return Err(DlmError::Parameter("a layout needs at least one sensor".into()));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(DlmError::Data("non-finite sensor position".into()));
        }
        if let Some(w) = positions.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(DlmError::Data(format!(
                "sensor positions must be strictly increasing (sensors {} and {})",
                ids[w], ids[w + 1]
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(DlmError::Data(format!("duplicate sensor id `{dup}`")));
        }
        Ok(Self { ids, positions })
    }

    /// Sensors named `s0, s1, ...` at the given positions.
    pub fn from_positions(positions: Vec<T>) -> Result<Self> {
        let ids = (0..positions.len()).map(|i| format!("s{i}")).collect();
        Self::new(ids, positions)
    }

    /// `m` sensors evenly spaced over `[0, length]`.
    pub fn uniform(m: usize, length: T) -> Result<Self> {
        if m < 2 {
            return Err(DlmError::Parameter("a layout needs at least 2 sensors".into()));
        }
        let denom = T::of_usize(m - 1);
        Self::from_positions((0..m).map(|i| length * T::of_usize(i) / denom).collect())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn first_position(&self) -> T {
        self.positions[0]
    }

    pub fn last_position(&self) -> T {
        self.positions[self.positions.len() - 1]
    }

    pub fn length(&self) -> T {
        self.last_position() - self.first_position()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }
}

/// One day's `M x (K+1)` speed grid in mph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayVelocityMatrix<T> {
    day_id: String,
    date: Option<NaiveDate>,
    values: Matrix<T>,
    /// Row-major, `true` where the cell was measured rather than imputed.
    observed: Vec<bool>,
}

impl<T: Real> DayVelocityMatrix<T> {
    /// Fully observed day. `day_id` is parsed as an ISO date when possible.
    pub fn new(day_id: impl Into<String>, values: Matrix<T>) -> Result<Self> {
        let n = values.rows() * values.cols();
        Self::with_mask(day_id, values, vec![true; n])
    }

    pub fn with_mask(day_id: impl Into<String>, values: Matrix<T>, observed: Vec<bool>) -> Result<Self> {
        let day_id = day_id.into();
        if observed.len() != values.rows() * values.cols() {
            return Err(DlmError::Dimension("observation mask does not match values".into()));
        }
        if let Some(bad) = values.as_slice().iter().position(|v| !(v.is_finite() && *v > T::zero())) {
            let (i, j) = (bad / values.cols(), bad % values.cols());
            return Err(DlmError::Data(format!(
                "day {day_id}: speed at sensor {i}, index {j} is {} (must be finite and positive)",
                values[(i, j)]
            )));
        }
        let date = NaiveDate::parse_from_str(&day_id, "%Y-%m-%d").ok();
        Ok(Self {
            day_id,
            date,
            values,
            observed,
        })
    }

    pub fn day_id(&self) -> &str {
        &self.day_id
    }

    pub fn date(&self) -> Option<NaiveDate> {
        self.date
    }

    pub fn weekday(&self) -> Option<Weekday> {
        self.date.map(|d| d.weekday())
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn num_sensors(&self) -> usize {
        self.values.rows()
    }

    pub fn num_steps(&self) -> usize {
        self.values.cols()
    }

    /// Velocity vector `v_k`.
    pub fn velocity_at(&self, k: usize) -> Vec<T> {
        self.values.column(k)
    }

    pub fn is_observed(&self, sensor: usize, k: usize) -> bool {
        self.observed[sensor * self.values.cols() + k]
    }

    pub fn imputed_count(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    /// Columns `0..=k`, the part of the day known at time index `k`.
    pub fn prefix(&self, k: usize) -> Matrix<T> {
        self.values.columns_range(0, k + 1)
    }
}

/// Chronologically ordered days sharing one grid and layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySet<T> {
    grid: TimeGrid,
    layout: SensorLayout<T>,
    days: Vec<DayVelocityMatrix<T>>,
}

impl<T: Real> DaySet<T> {
    /// Validates dimensions, id uniqueness, and date ordering (oldest first).
    pub fn new(grid: TimeGrid, layout: SensorLayout<T>, days: Vec<DayVelocityMatrix<T>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for day in &days {
            check_day_shape(day, &grid, &layout)?;
            if !seen.insert(day.day_id()) {
                return Err(DlmError::Data(format!("duplicate day id `{}`", day.day_id())));
            }
        }
        for w in days.windows(2) {
            if let (Some(a), Some(b)) = (w[0].date(), w[1].date()) {
                if a >= b {
                    return Err(DlmError::Data(format!(
                        "days must be chronological: {} is not before {}",
                        w[0].day_id(),
                        w[1].day_id()
                    )));
                }
            }
        }
        Ok(Self { grid, layout, days })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn layout(&self) -> &SensorLayout<T> {
        &self.layout
    }

    pub fn days(&self) -> &[DayVelocityMatrix<T>] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn into_days(self) -> Vec<DayVelocityMatrix<T>> {
        self.days
    }

    /// A day set over the same grid and layout holding `days`.
    pub fn with_days(&self, days: Vec<DayVelocityMatrix<T>>) -> Result<Self> {
        Self::new(self.grid, self.layout.clone(), days)
    }

    /// `V_k`: column `i` is day `i`'s velocity vector at index `k`.
    pub fn time_velocity_matrix(&self, k: usize) -> Result<Matrix<T>> {
        self.grid.check_index(k)?;
        let m = self.layout.len();
        Ok(Matrix::from_fn(m, self.days.len(), |i, j| self.days[j].values()[(i, k)]))
    }
}

pub(crate) fn check_day_shape<T: Real>(
    day: &DayVelocityMatrix<T>,
    grid: &TimeGrid,
    layout: &SensorLayout<T>,
) -> Result<()> {
    if day.num_sensors() != layout.len() || day.num_steps() != grid.num_steps() {
        return Err(DlmError::Dimension(format!(
            "day {} is {}x{}, expected {}x{}",
            day.day_id(),
            day.num_sensors(),
            day.num_steps(),
            layout.len(),
            grid.num_steps()
        )));
    }
    Ok(())
}

/// Diagonal of the forgetting matrix: `(λ^{n-1}, ..., λ, 1)`.
pub fn forgetting_weights<T: Real>(n: usize, lambda: T) -> Result<Vec<T>> {
    if n == 0 {
        return Err(DlmError::Parameter("forgetting weights need n >= 1".into()));
    }
    check_forgetting_factor(lambda)?;
    let mut w = vec![T::one(); n];
    for i in (0..n - 1).rev() {
        w[i] = w[i + 1] * lambda;
    }
    Ok(w)
}

pub(crate) fn check_forgetting_factor<T: Real>(lambda: T) -> Result<()> {
    if !(lambda > T::zero() && lambda <= T::one()) {
        return Err(DlmError::Parameter(format!(
            "forgetting factor must lie in (0, 1], got {lambda}"
        )));
    }
    Ok(())
}

/// Half-open minute-of-day window on a set of weekdays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodWindow {
    pub days: Vec<Weekday>,
    pub start_minute: u32,
    /// Exclusive unless `end_inclusive`.
    pub end_minute: u32,
    #[serde(default)]
    pub end_inclusive: bool,
}

impl PeriodWindow {
    pub fn new(days: &[Weekday], start_minute: u32, end_minute: u32) -> Self {
        Self {
            days: days.to_vec(),
            start_minute,
            end_minute,
            end_inclusive: false,
        }
    }

    pub fn contains(&self, day: Weekday, minute: u32) -> bool {
        let before_end = if self.end_inclusive {
            minute <= self.end_minute
        } else {
            minute < self.end_minute
        };
        self.days.contains(&day) && minute >= self.start_minute && before_end
    }
}

pub const WEEKDAYS: [Weekday; 5] = [Weekday::Mon, Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Fri];
pub const ALL_DAYS: [Weekday; 7] = [
    Weekday::Mon,
    Weekday::Tue,
    Weekday::Wed,
    Weekday::Thu,
    Weekday::Fri,
    Weekday::Sat,
    Weekday::Sun,
];

/// Classifies `(weekday, minute)` instants as in or out.
///
/// An instant is in the mask when some `include` window holds it and no
/// `exclude` window does.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodMask {
    pub name: String,
    pub include: Vec<PeriodWindow>,
    #[serde(default)]
    pub exclude: Vec<PeriodWindow>,
}

impl PeriodMask {
    pub fn new(name: impl Into<String>, include: Vec<PeriodWindow>, exclude: Vec<PeriodWindow>) -> Self {
        Self {
            name: name.into(),
            include,
            exclude,
        }
    }

    /// Every instant of every day.
    pub fn always(name: impl Into<String>) -> Self {
        let all = PeriodWindow {
            days: ALL_DAYS.to_vec(),
            start_minute: 0,
            end_minute: 24 * 60,
            end_inclusive: true,
        };
        Self::new(name, vec![all], vec![])
    }

    pub fn contains(&self, day: Weekday, minute: u32) -> bool {
        self.include.iter().any(|w| w.contains(day, minute)) && !self.exclude.iter().any(|w| w.contains(day, minute))
    }

    /// Needs a calendar date; days without one are never in a dated mask.
    pub fn contains_day_minute<T: Real>(&self, day: &DayVelocityMatrix<T>, minute: u32) -> Option<bool> {
        day.weekday().map(|wd| self.contains(wd, minute))
    }
}
