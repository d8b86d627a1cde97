#![allow(dead_code)]

use freeway_dlm::{DaySet, DayVelocityMatrix, Matrix, SensorLayout, TimeGrid};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Days of independent uniform speeds in `[20, 70]`.
pub fn random_set(rng: &mut ChaCha8Rng, m: usize, days: usize, steps: usize) -> DaySet<f64> {
    let grid = TimeGrid::new(360, 5, steps).unwrap();
    let layout = if m == 1 {
        SensorLayout::from_positions(vec![0.0]).unwrap()
    } else {
        SensorLayout::uniform(m, 3.0).unwrap()
    };
    let days = (0..days)
        .map(|d| {
            let v = Matrix::from_fn(m, steps, |_, _| rng.random_range(20.0..70.0));
            DayVelocityMatrix::new(format!("day-{d:03}"), v).unwrap()
        })
        .collect();
    DaySet::new(grid, layout, days).unwrap()
}

/// Scalar day set from explicit per-day sequences, oldest first.
pub fn scalar_set(days: &[&[f64]]) -> DaySet<f64> {
    let steps = days[0].len();
    let grid = TimeGrid::new(360, 5, steps).unwrap();
    let layout = SensorLayout::from_positions(vec![0.0]).unwrap();
    let days = days
        .iter()
        .enumerate()
        .map(|(d, s)| DayVelocityMatrix::new(format!("d{d}"), Matrix::from_rows(&[s.to_vec()]).unwrap()).unwrap())
        .collect();
    DaySet::new(grid, layout, days).unwrap()
}

/// `V_{k+1} Λ V_kᵀ (V_k Λ V_kᵀ + ρ λ^N I)^+` computed with nalgebra's SVD
/// pseudo-inverse, independent of the crate's solver.
pub fn oracle_transition(set: &DaySet<f64>, k: usize, rho: f64, lambda: f64) -> DMatrix<f64> {
    let n = set.len();
    let m = set.layout().len();
    let v0 = to_na(&set.time_velocity_matrix(k).unwrap());
    let v1 = to_na(&set.time_velocity_matrix(k + 1).unwrap());
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |d, _| lambda.powi((n - 1 - d) as i32)));
    let gram = &v0 * &w * v0.transpose() + DMatrix::identity(m, m) * (rho * lambda.powi(n as i32));
    let inv = gram.pseudo_inverse(1e-300).unwrap();
    &v1 * &w * v0.transpose() * inv
}

/// Weighted objective `Σ_d λ^{N-1-d} ||v_{k+1} - H v_k||² + ρ λ^N ||H||_F²`.
pub fn objective(set: &DaySet<f64>, k: usize, h: &DMatrix<f64>, rho: f64, lambda: f64) -> f64 {
    let n = set.len();
    let mut total = rho * lambda.powi(n as i32) * h.norm_squared();
    for (d, day) in set.days().iter().enumerate() {
        let v0 = nalgebra::DVector::from_vec(day.velocity_at(k));
        let v1 = nalgebra::DVector::from_vec(day.velocity_at(k + 1));
        total += lambda.powi((n - 1 - d) as i32) * (v1 - h * v0).norm_squared();
    }
    total
}
