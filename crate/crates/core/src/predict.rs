//! Multi-step velocity prediction through trained transitions.

use serde::{Deserialize, Serialize};

use crate::dlm::DlmModel;
use crate::error::{DlmError, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Saturation applied to each predicted speed.
///
/// Identity on `[lower, upper]`; outside, a soft saturation
/// `b * z / (1 + |z|) + threshold` with `z = a (x - threshold)`, so outputs
/// stay strictly inside `(lower - b, upper + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostProcessParams<T> {
    pub a: T,
    pub b: T,
    pub lower: T,
    pub upper: T,
}

impl<T: Real> Default for PostProcessParams<T> {
    /// `a = 0.05`, `b = 10 mph`, thresholds 10 and 75 mph: outputs in `(0, 85)`.
    fn default() -> Self {
        Self {
            a: T::of(0.05),
            b: T::of(10.0),
            lower: T::of(10.0),
            upper: T::of(75.0),
        }
    }
}

impl<T: Real> PostProcessParams<T> {
    pub fn new(a: T, b: T, lower: T, upper: T) -> Result<Self> {
        let p = Self { a, b, lower, upper };
        p.validate()?;
        Ok(p)
    }

    /// Requires `a > 0`, `b > 0`, `0 <= lower < upper` and `b <= lower` so the
    /// floor `lower - b` is non-negative.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.lower, self.upper].iter().all(|x| x.is_finite());
        if !finite || !(self.a > T::zero()) || !(self.b > T::zero()) {
            return Err(DlmError::Parameter("post-processing needs finite a > 0 and b > 0".into()));
        }
        if !(self.lower >= T::zero() && self.lower < self.upper) {
            return Err(DlmError::Parameter(format!(
                "post-processing thresholds must satisfy 0 <= lower < upper (got {}, {})",
                self.lower, self.upper
            )));
        }
        if self.b > self.lower {
            return Err(DlmError::Parameter(format!(
                "b = {} exceeds the lower threshold {}; saturated speeds could be negative",
                self.b, self.lower
            )));
        }
        Ok(())
    }

    /// Infimum of the output range.
    pub fn floor(&self) -> T {
        self.lower - self.b
    }

    /// Supremum of the output range.
    pub fn ceiling(&self) -> T {
        self.upper + self.b
    }

    #[inline]
    pub(crate) fn apply(&self, x: T) -> T {
        if x < self.lower {
            self.saturate(x, self.lower)
        } else if x > self.upper {
            self.saturate(x, self.upper)
        } else {
            x
        }
    }

    #[inline]
    fn saturate(&self, x: T, threshold: T) -> T {
        let z = self.a * (x - threshold);
        self.b * (z / (T::one() + z.abs())) + threshold
    }

    pub fn is_identity_at(&self, x: T) -> bool {
        x >= self.lower && x <= self.upper
    }
}

pub fn post_process<T: Real>(x: T, params: &PostProcessParams<T>) -> Result<T> {
    if !x.is_finite() {
        return Err(DlmError::Data(format!("cannot post-process non-finite speed {x}")));
    }
    Ok(params.apply(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnSource {
    Observed,
    Predicted,
}

/// Predicted speeds `v̂_{k+1|k} .. v̂_{k+i|k}` as columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedField<T> {
    pub origin: usize,
    pub steps: usize,
    pub values: Matrix<T>,
    pub sources: Vec<ColumnSource>,
    /// Column had at least one raw value outside the identity band.
    pub saturated: Vec<bool>,
}

impl<T: Real> PredictedField<T> {
    /// Grid index of column `j`.
    pub fn index_of_column(&self, j: usize) -> usize {
        self.origin + 1 + j
    }
}

fn check_start<T: Real>(model: &DlmModel<T>, v: &[T], k: usize, steps: usize) -> Result<()> {
    if v.len() != model.num_sensors() {
        return Err(DlmError::Dimension(format!(
            "velocity vector has {} entries, model has {} sensors",
            v.len(),
            model.num_sensors()
        )));
    }
    if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x > T::zero())) {
        return Err(DlmError::Data(format!("current speeds must be finite and positive, got {x}")));
    }
    model.check_horizon(k, steps)
}

/// Post-processed recursion: each column is `f(H̄ · previous column)`.
pub fn predict_steps<T: Real>(
    model: &DlmModel<T>,
    v_k: &[T],
    k: usize,
    steps: usize,
    params: &PostProcessParams<T>,
) -> Result<PredictedField<T>> {
    check_start(model, v_k, k, steps)?;
    params.validate()?;
    let m = v_k.len();
    let mut values = Matrix::zeros(m, steps);
    let mut saturated = vec![false; steps];
    let mut current = v_k.to_vec();
    for j in 0..steps {
        let raw = model.states()[k + j].transition.mul_vec(&current);
        saturated[j] = raw.iter().any(|&x| !params.is_identity_at(x));
        current = raw.into_iter().map(|x| params.apply(x)).collect();
        values.set_column(j, &current);
    }
    Ok(PredictedField {
        origin: k,
        steps,
        values,
        sources: vec![ColumnSource::Predicted; steps],
        saturated,
    })
}

/// Unprocessed `i`-step prediction, the propagator applied to `v_k`.
///
/// Evaluated as successive matrix-vector products, so it matches
/// [`predict_steps`] bit for bit whenever no value leaves the identity band.
pub fn predict_linear<T: Real>(model: &DlmModel<T>, v_k: &[T], k: usize, steps: usize) -> Result<Vec<T>> {
    check_start(model, v_k, k, steps)?;
    let mut current = v_k.to_vec();
    for st in &model.states()[k..k + steps] {
        current = st.transition.mul_vec(&current);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn post_process_examples() {
        let p = PostProcessParams::<f64>::default();
        assert_eq!(post_process(50.0, &p).unwrap(), 50.0);
        assert!((post_process(-10.0, &p).unwrap() - 5.0).abs() < 1e-12);
        assert!((post_process(275.0, &p).unwrap() - (75.0 + 100.0 / 11.0)).abs() < 1e-12);
        assert!((post_process(1e12, &p).unwrap() - 85.0).abs() < 1e-9);
        assert_eq!(post_process(10.0, &p).unwrap(), 10.0);
        assert_eq!(post_process(75.0, &p).unwrap(), 75.0);
        assert!(post_process(f64::NAN, &p).is_err());
        assert!(post_process(f64::INFINITY, &p).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(PostProcessParams::new(0.0, 10.0, 10.0, 75.0).is_err());
        assert!(PostProcessParams::new(0.05, 10.0, 75.0, 10.0).is_err());
        assert!(PostProcessParams::new(0.05, 20.0, 10.0, 75.0).is_err());
        assert!(PostProcessParams::new(0.05, 5.0, 10.0, 60.0).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn strictly_increasing_and_bounded(x in -1e6f64..1e6, dx in 1.0f64..100.0) {
            let p = PostProcessParams::<f64>::default();
            let (fx, fy) = (p.apply(x), p.apply(x + dx));
            proptest::prop_assert!(fx < fy);
            proptest::prop_assert!(fx > 0.0 && fx < 85.0);
        }
    }
}
