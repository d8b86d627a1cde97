//! Per-time-index transition matrices fitted by regularized,
//! forgetting-weighted least squares, with exact rank-one day updates.
//!
//! For each transition `k -> k+1` the model keeps
//!
//! ```text
//! G_k = Σ_d w_d v_{k+1}^d (v_k^d)ᵀ
//! P_k = (Σ_d w_d v_k^d (v_k^d)ᵀ + ρ λ^N I)^{-1}
//! H_k = G_k P_k
//! ```
//!
//! with `w_d = λ^{N-1-d}` so the newest day has weight one. Folding a new
//! day scales both sums by `λ` and adds one outer product; `P_k` follows by
//! the matrix inversion lemma, so batch and recursive fits agree.

mod format;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use format::{decode_model, encode_model, load_model, save_model, FORMAT_MAJOR, FORMAT_MINOR, MAGIC};

use crate::domain::{check_day_shape, check_forgetting_factor, forgetting_weights, DayVelocityMatrix, DaySet, SensorLayout, TimeGrid};
use crate::error::{DlmError, Result};
use crate::linalg::{Cholesky, CholeskyFailure, Matrix};
use crate::scalar::Real;

/// Regularization `ρ >= 0` and forgetting factor `λ ∈ (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams<T> {
    pub regularization: T,
    pub forgetting: T,
}

impl<T: Real> Hyperparams<T> {
    pub fn new(regularization: T, forgetting: T) -> Result<Self> {
        let h = Self {
            regularization,
            forgetting,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.regularization >= T::zero() && self.regularization.is_finite()) {
            return Err(DlmError::Parameter(format!(
                "regularization must be finite and >= 0, got {}",
                self.regularization
            )));
        }
        check_forgetting_factor(self.forgetting)
    }
}

/// Sufficient statistics and cached transition for one time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionState<T> {
    /// `G_k`, the weighted cross moment of successive velocity vectors.
    pub cross_moment: Matrix<T>,
    /// `P_k`, the inverse of the regularized weighted Gram matrix.
    pub inverse_gram: Matrix<T>,
    /// `H̄_k = G_k P_k`.
    pub transition: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlmModel<T> {
    hyper: Hyperparams<T>,
    days_seen: u64,
    grid: TimeGrid,
    layout: SensorLayout<T>,
    states: Vec<TransitionState<T>>,
}

impl<T: Real> DlmModel<T> {
    /// Empty-day-set model: `G = 0`, `P = I / ρ`, `H̄ = 0`. Needs `ρ > 0`.
    pub fn init(grid: TimeGrid, layout: SensorLayout<T>, hyper: Hyperparams<T>) -> Result<Self> {
        hyper.validate()?;
        if hyper.regularization <= T::zero() {
            return Err(DlmError::Parameter(
                "an empty model needs regularization > 0 (the unregularized Gram matrix is zero); \
                 fit a batch first or choose rho > 0"
                    .into(),
            ));
        }
        let m = layout.len();
        let p = Matrix::identity(m).scaled(T::one() / hyper.regularization);
        let state = TransitionState {
            cross_moment: Matrix::zeros(m, m),
            inverse_gram: p,
            transition: Matrix::zeros(m, m),
        };
        Ok(Self {
            hyper,
            days_seen: 0,
            grid,
            layout,
            states: vec![state; grid.last_index()],
        })
    }

    /// Closed-form fit over a whole day set.
    ///
    /// Each `H̄_k` comes from an LDLᵀ solve of the regularized normal
    /// equations; `P_k` is also materialized so the model can be updated.
    pub fn fit_batch(dayset: &DaySet<T>, hyper: Hyperparams<T>) -> Result<Self> {
        hyper.validate()?;
        if dayset.is_empty() {
            return Err(DlmError::Parameter("cannot fit on an empty day set".into()));
        }
        let n = dayset.len();
        let m = dayset.layout().len();
        let weights = forgetting_weights(n, hyper.forgetting)?;
        let ridge = hyper.regularization * weights[0] * hyper.forgetting;
        let rank_tol = if hyper.regularization > T::zero() {
            T::zero()
        } else {
            T::epsilon() * T::of_usize(16 * m.max(1))
        };
        let days = dayset.days();
        let states = (0..dayset.grid().last_index())
            .into_par_iter()
            .map(|k| {
                let mut gram = Matrix::identity(m).scaled(ridge);
                let mut cross = Matrix::zeros(m, m);
                for (day, &w) in days.iter().zip(&weights) {
                    let now = day.velocity_at(k);
                    let next = day.velocity_at(k + 1);
                    gram.add_outer(w, &now, &now);
                    cross.add_outer(w, &next, &now);
                }
                gram.symmetrize();
                let chol = Cholesky::factor(&gram, rank_tol).map_err(|CholeskyFailure::NotPositiveDefinite { .. }| {
                    if hyper.regularization > T::zero() {
                        DlmError::Numerical(format!("regularized Gram matrix at index {k} is not positive definite"))
                    } else {
                        DlmError::RankDeficient { k }
                    }
                })?;
                // H gram = cross, gram symmetric: solve gram h_iᵀ = cross_iᵀ row by row.
                let mut transition = Matrix::zeros(m, m);
                for i in 0..m {
                    let row = chol.solve(cross.row(i));
                    for (j, v) in row.into_iter().enumerate() {
                        transition[(i, j)] = v;
                    }
                }
                let state = TransitionState {
                    cross_moment: cross,
                    inverse_gram: chol.inverse(),
                    transition,
                };
                check_state(&state, k)?;
                Ok(state)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            hyper,
            days_seen: n as u64,
            grid: *dayset.grid(),
            layout: dayset.layout().clone(),
            states,
        })
    }

    /// Successor model after folding in one more (newest) day.
    pub fn update_with_day(&self, day: &DayVelocityMatrix<T>) -> Result<Self> {
        check_day_shape(day, &self.grid, &self.layout)?;
        let lambda = self.hyper.forgetting;
        let inv_lambda = T::one() / lambda;
        let states = self
            .states
            .par_iter()
            .enumerate()
            .map(|(k, st)| {
                let now = day.velocity_at(k);
                let next = day.velocity_at(k + 1);

                let mut cross = st.cross_moment.scaled(lambda);
                cross.add_outer(T::one(), &next, &now);

                let p_now = st.inverse_gram.mul_vec(&now);
                let quad: T = now.iter().zip(&p_now).map(|(&a, &b)| a * b).sum();
                let denom = T::one() + inv_lambda * quad;
                let gain: Vec<T> = p_now.iter().map(|&x| x * inv_lambda).collect();
                let mut p = st.inverse_gram.scaled(inv_lambda);
                p.add_outer(-T::one() / denom, &gain, &gain);
                p.symmetrize();

                let state = TransitionState {
                    transition: cross.matmul(&p),
                    cross_moment: cross,
                    inverse_gram: p,
                };
                check_state(&state, k)?;
                Ok(state)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            hyper: self.hyper,
            days_seen: self.days_seen + 1,
            grid: self.grid,
            layout: self.layout.clone(),
            states,
        })
    }

    /// Folds days oldest first.
    pub fn update_with_days<'a>(&self, days: impl IntoIterator<Item = &'a DayVelocityMatrix<T>>) -> Result<Self> {
        let mut model = self.clone();
        for day in days {
            model = model.update_with_day(day)?;
        }
        Ok(model)
    }

    pub fn hyper(&self) -> &Hyperparams<T> {
        &self.hyper
    }

    pub fn days_seen(&self) -> u64 {
        self.days_seen
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn layout(&self) -> &SensorLayout<T> {
        &self.layout
    }

    pub fn num_sensors(&self) -> usize {
        self.layout.len()
    }

    /// Number of transitions `K`.
    pub fn num_transitions(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[TransitionState<T>] {
        &self.states
    }

    pub fn state(&self, k: usize) -> Result<&TransitionState<T>> {
        self.states.get(k).ok_or_else(|| DlmError::Index {
            index: k,
            valid: format!("0..{}", self.states.len()),
        })
    }

    /// Cached `H̄_k`.
    pub fn transition_at(&self, k: usize) -> Result<&Matrix<T>> {
        Ok(&self.state(k)?.transition)
    }

    /// `H̄_{k+i-1} ... H̄_{k+1} H̄_k`, the `i`-step propagator from index `k`.
    pub fn propagate(&self, k: usize, steps: usize) -> Result<Matrix<T>> {
        self.check_horizon(k, steps)?;
        let mut acc = self.states[k].transition.clone();
        for j in 1..steps {
            acc = self.states[k + j].transition.matmul(&acc);
        }
        Ok(acc)
    }

    pub(crate) fn check_horizon(&self, k: usize, steps: usize) -> Result<()> {
        if steps == 0 {
            return Err(DlmError::Parameter("propagation needs at least one step".into()));
        }
        if k + steps > self.states.len() {
            return Err(DlmError::Range(format!(
                "{steps} steps from index {k} pass the end of the grid (K = {})",
                self.states.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        hyper: Hyperparams<T>,
        days_seen: u64,
        grid: TimeGrid,
        layout: SensorLayout<T>,
        states: Vec<TransitionState<T>>,
    ) -> Result<Self> {
        hyper.validate()?;
        if states.len() != grid.last_index() {
            return Err(DlmError::Dimension(format!(
                "{} transition states for a grid with K = {}",
                states.len(),
                grid.last_index()
            )));
        }
        Ok(Self {
            hyper,
            days_seen,
            grid,
            layout,
            states,
        })
    }
}

fn check_state<T: Real>(state: &TransitionState<T>, k: usize) -> Result<()> {
    if state.cross_moment.all_finite() && state.inverse_gram.all_finite() && state.transition.all_finite() {
        Ok(())
    } else {
        Err(DlmError::Numerical(format!("non-finite model entries at index {k}")))
    }
}
