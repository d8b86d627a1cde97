//! Continuous velocity fields and forward-integrated travel times.
//!
//! Times are clock minutes, positions miles, speeds mph.

use serde::{Deserialize, Serialize};

use crate::domain::{DayVelocityMatrix, SensorLayout, TimeGrid};
use crate::error::{DlmError, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

const MINUTES_PER_HOUR: f64 = 60.0;
/// Positions this close outside the corridor are clamped onto it.
const POSITION_SLACK: f64 = 1e-9;

/// Speeds on a rectangular (position x time) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedField<T> {
    times: Vec<T>,
    positions: Vec<T>,
    /// `positions.len() x times.len()`.
    values: Matrix<T>,
}

impl<T: Real> GriddedField<T> {
    pub fn new(times: Vec<T>, positions: Vec<T>, values: Matrix<T>) -> Result<Self> {
        if times.len() < 2 || positions.len() < 2 {
            return Err(DlmError::Parameter(format!(
                "a velocity field needs at least 2 times and 2 positions (got {} and {})",
                times.len(),
                positions.len()
            )));
        }
        if values.shape() != (positions.len(), times.len()) {
            return Err(DlmError::Dimension(format!(
                "field values are {}x{}, expected {}x{}",
                values.rows(),
                values.cols(),
                positions.len(),
                times.len()
            )));
        }
        for (name, axis) in [("times", &times), ("positions", &positions)] {
            if !axis.iter().all(|x| x.is_finite()) || axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(DlmError::Data(format!("field {name} must be finite and strictly increasing")));
            }
        }
        if let Some(v) = values.as_slice().iter().find(|v| !(v.is_finite() && **v > T::zero())) {
            return Err(DlmError::Data(format!("field speeds must be finite and positive, got {v}")));
        }
        Ok(Self {
            times,
            positions,
            values,
        })
    }

    /// Columns of `values` sit at grid indices `first_index, first_index + 1, ...`.
    pub fn on_grid(grid: &TimeGrid, first_index: usize, layout: &SensorLayout<T>, values: Matrix<T>) -> Result<Self> {
        let times = (0..values.cols()).map(|j| grid.minute_at(first_index + j)).collect();
        Self::new(times, layout.positions().to_vec(), values)
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn first_time(&self) -> T {
        self.times[0]
    }

    pub fn last_time(&self) -> T {
        self.times[self.times.len() - 1]
    }
}

/// Bilinear view `v(t, x)` over a [`GriddedField`].
///
/// Degree-one tensor B-spline interpolation on a rectangular grid, i.e.
/// piecewise bilinear: exact at nodes and continuous on the extent.
#[derive(Debug, Clone)]
pub struct VelocityFieldFn<T> {
    field: GriddedField<T>,
}

pub fn interpolate_field<T: Real>(field: GriddedField<T>) -> VelocityFieldFn<T> {
    VelocityFieldFn { field }
}

/// Interval `i` with `axis[i] <= q <= axis[i + 1]` and the weight of `axis[i + 1]`.
fn locate<T: Real>(axis: &[T], q: T) -> (usize, T) {
    let n = axis.len();
    let i = axis.partition_point(|&a| a <= q).clamp(1, n - 1) - 1;
    let w = (q - axis[i]) / (axis[i + 1] - axis[i]);
    (i, w)
}

impl<T: Real> VelocityFieldFn<T> {
    pub fn field(&self) -> &GriddedField<T> {
        &self.field
    }

    fn extent_error(&self, t: T, x: T) -> DlmError {
        let f = &self.field;
        DlmError::Extent {
            t: t.to_f64_lossy(),
            x: x.to_f64_lossy(),
            t_min: f.first_time().to_f64_lossy(),
            t_max: f.last_time().to_f64_lossy(),
            x_min: f.positions[0].to_f64_lossy(),
            x_max: f.positions[f.positions.len() - 1].to_f64_lossy(),
        }
    }

    fn clamp_position(&self, x: T) -> Option<T> {
        let p = &self.field.positions;
        let (lo, hi) = (p[0], p[p.len() - 1]);
        let slack = T::of(POSITION_SLACK);
        if x >= lo - slack && x <= hi + slack {
            Some(x.max(lo).min(hi))
        } else {
            None
        }
    }

    pub fn contains_time(&self, t: T) -> bool {
        t >= self.field.first_time() && t <= self.field.last_time()
    }

    /// Speed at clock minute `t` and position `x`.
    pub fn at(&self, t: T, x: T) -> Result<T> {
        if !self.contains_time(t) {
            return Err(self.extent_error(t, x));
        }
        let x = self.clamp_position(x).ok_or_else(|| self.extent_error(t, x))?;
        let (ti, wt) = locate(&self.field.times, t);
        let (xi, wx) = locate(&self.field.positions, x);
        let v = &self.field.values;
        let one = T::one();
        let near = v[(xi, ti)] * (one - wt) + v[(xi, ti + 1)] * wt;
        let far = v[(xi + 1, ti)] * (one - wt) + v[(xi + 1, ti + 1)] * wt;
        Ok(near * (one - wx) + far * wx)
    }
}

/// Minutes to drive from `x0` to `x_dest` departing at clock minute `t0`.
///
/// Forward Euler in space: each step of at most `dx` miles takes
/// `step / v(t, x)` hours with `v` read at the start of the step. The final
/// step is shortened to land exactly on `x_dest`. The whole trajectory must
/// stay inside the field's time extent.
pub fn travel_time<T: Real>(field: &VelocityFieldFn<T>, t0: T, x0: T, x_dest: T, dx: T) -> Result<T> {
    if !(dx > T::zero() && dx.is_finite()) {
        return Err(DlmError::Parameter(format!("space increment must be positive, got {dx}")));
    }
    if !(x0 < x_dest) {
        return Err(DlmError::Parameter(format!(
            "origin {x0} must lie strictly before destination {x_dest}"
        )));
    }
    if field.clamp_position(x0).is_none() || field.clamp_position(x_dest).is_none() {
        return Err(field.extent_error(t0, if field.clamp_position(x0).is_none() { x0 } else { x_dest }));
    }
    if !field.contains_time(t0) {
        return Err(field.extent_error(t0, x0));
    }
    let per_hour = T::of(MINUTES_PER_HOUR);
    let t_last = field.field.last_time();
    let trip = x_dest - x0;
    let exceeded = |x: T, t: T| DlmError::HorizonExceeded {
        covered_miles: (x - x0).to_f64_lossy(),
        trip_miles: trip.to_f64_lossy(),
        at_minute: t.to_f64_lossy(),
    };

    let mut t = t0;
    let mut x = x0;
    let mut n: u64 = 0;
    while x < x_dest {
        if t > t_last {
            return Err(exceeded(x, t));
        }
        let v = field.at(t, x)?;
        n += 1;
        // position from the step count, not by accumulation
        let next = (x0 + dx * T::from_u64(n).expect("step count")).min(x_dest);
        t = t + per_hour * (next - x) / v;
        x = next;
    }
    if t > t_last {
        return Err(exceeded(x, t));
    }
    Ok(t - t0)
}

/// Travel time experienced on a fully observed day.
pub fn experienced_travel_time<T: Real>(
    day: &DayVelocityMatrix<T>,
    layout: &SensorLayout<T>,
    grid: &TimeGrid,
    t0: T,
    x0: T,
    x_dest: T,
    dx: T,
) -> Result<T> {
    let field = GriddedField::on_grid(grid, 0, layout, day.values().clone())?;
    travel_time(&interpolate_field(field), t0, x0, x_dest, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_field(v: f64, length: f64, times: usize) -> VelocityFieldFn<f64> {
        let positions = vec![0.0, length];
        let times: Vec<f64> = (0..times).map(|j| 360.0 + 5.0 * j as f64).collect();
        let values = Matrix::from_fn(2, times.len(), |_, _| v);
        interpolate_field(GriddedField::new(times, positions, values).unwrap())
    }

    #[test]
    fn constant_field_interpolates_to_constant() {
        let f = constant_field(60.0, 10.0, 4);
        for (t, x) in [(360.0, 0.0), (361.3, 4.2), (375.0, 10.0), (370.0, 9.9999)] {
            assert_eq!(f.at(t, x).unwrap(), 60.0);
        }
    }

    #[test]
    fn bilinear_midpoint_in_time() {
        let values = Matrix::from_rows(&[vec![40.0, 60.0], vec![40.0, 60.0]]).unwrap();
        let f = interpolate_field(GriddedField::new(vec![0.0, 5.0], vec![0.0, 1.0], values).unwrap());
        assert_eq!(f.at(2.5, 0.0).unwrap(), 50.0);
        assert_eq!(f.at(2.5, 0.5).unwrap(), 50.0);
        assert_eq!(f.at(5.0, 1.0).unwrap(), 60.0);
    }

    #[test]
    fn queries_outside_extent_fail() {
        let f = constant_field(60.0, 10.0, 3);
        assert!(matches!(f.at(359.0, 1.0), Err(DlmError::Extent { .. })));
        assert!(matches!(f.at(361.0, 10.1), Err(DlmError::Extent { .. })));
        // floating-point slack at the corridor ends
        assert_eq!(f.at(361.0, 10.0 + 1e-10).unwrap(), 60.0);
        assert_eq!(f.at(361.0, -1e-10).unwrap(), 60.0);
    }

    #[test]
    fn constant_speed_is_distance_over_speed() {
        let f = constant_field(60.0, 30.0, 20);
        for dx in [0.01, 0.1, 0.5, 1.0, 3.0, 30.0] {
            let tt = travel_time(&f, 360.0, 0.0, 30.0, dx).unwrap();
            assert!((tt - 30.0).abs() < 1e-9, "dx = {dx}: {tt}");
        }
    }

    #[test]
    fn departure_at_last_time_exceeds_horizon() {
        let f = constant_field(60.0, 30.0, 3);
        let err = travel_time(&f, 370.0, 0.0, 1.0, 0.01).unwrap_err();
        assert!(matches!(err, DlmError::HorizonExceeded { .. }));
        let err = travel_time(&f, 360.0, 0.0, 30.0, 0.01).unwrap_err();
        match err {
            DlmError::HorizonExceeded { covered_miles, .. } => assert!(covered_miles > 9.9 && covered_miles < 10.1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn preconditions() {
        let f = constant_field(60.0, 30.0, 3);
        assert!(matches!(travel_time(&f, 360.0, 5.0, 5.0, 0.01), Err(DlmError::Parameter(_))));
        assert!(matches!(travel_time(&f, 360.0, 0.0, 5.0, 0.0), Err(DlmError::Parameter(_))));
        assert!(matches!(travel_time(&f, 100.0, 0.0, 5.0, 0.01), Err(DlmError::Extent { .. })));
        assert!(matches!(travel_time(&f, 360.0, 0.0, 31.0, 0.01), Err(DlmError::Extent { .. })));
    }

    #[test]
    fn field_validation() {
        let v = Matrix::from_fn(2, 2, |_, _| 50.0);
        assert!(GriddedField::new(vec![0.0], vec![0.0, 1.0], Matrix::from_fn(2, 1, |_, _| 1.0)).is_err());
        assert!(GriddedField::new(vec![1.0, 0.0], vec![0.0, 1.0], v.clone()).is_err());
        assert!(GriddedField::new(vec![0.0, 1.0], vec![0.0, 1.0], v.map(|_| -1.0)).is_err());
        assert!(GriddedField::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0], v).is_err());
    }

    proptest::proptest! {
        #[test]
        fn nodes_are_exact(vals in proptest::collection::vec(1.0f64..90.0, 12)) {
            let values = Matrix::from_row_major(3, 4, vals).unwrap();
            let times = vec![0.0, 5.0, 10.0, 15.0];
            let positions = vec![0.0, 0.7, 1.9];
            let f = interpolate_field(GriddedField::new(times.clone(), positions.clone(), values.clone()).unwrap());
            for (i, &x) in positions.iter().enumerate() {
                for (j, &t) in times.iter().enumerate() {
                    proptest::prop_assert_eq!(f.at(t, x).unwrap(), values[(i, j)]);
                }
            }
        }
    }
}
