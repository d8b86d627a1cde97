//! Small dense row-major matrices and a Cholesky solver.
//!
//! Corridors carry on the order of a hundred sensors, so everything here is
//! plain `O(n^3)` dense arithmetic without blocking.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{DlmError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![T::one(); n])
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds from row-major storage.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DlmError::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(DlmError::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<T>]) -> Result<Self> {
        let c = columns.len();
        let r = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|col| col.len() != r) {
            return Err(DlmError::Dimension("columns of unequal length".into()));
        }
        Ok(Self::from_fn(r, c, |i, j| columns[j][i]))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[T]) {
        assert_eq!(values.len(), self.rows, "column length");
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    /// Copy of columns `start..end`.
    pub fn columns_range(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols, "column range");
        Self::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (p, &a) in lhs_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(p)) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mat-vec dimension");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "add shape");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "sub shape");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    /// `self += alpha * u v^T`.
    pub fn add_outer(&mut self, alpha: T, u: &[T], v: &[T]) {
        assert_eq!(u.len(), self.rows);
        assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let s = alpha * ui;
            for (x, &vj) in self.data[i * self.cols..(i + 1) * self.cols].iter_mut().zip(v) {
                *x = *x + s * vj;
            }
        }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// `‖self − other‖_F / max(‖other‖_F, tiny)`.
    pub fn relative_frobenius_distance(&self, other: &Self) -> T {
        let diff = self.sub(other).frobenius_norm();
        let scale = other.frobenius_norm();
        if scale > T::zero() {
            diff / scale
        } else {
            diff
        }
    }

    /// Replaces the matrix with `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square());
        let half = T::of(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let m = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::of(x.to_f64_lossy())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Square-root-free Cholesky factorization `A = L D Lᵀ`, `L` unit lower
/// triangular and `D` diagonal with positive entries.
///
/// For a `1 x 1` system the solve is a single division, so scalar problems
/// are answered with one rounding.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
    diag: Vec<T>,
}

/// Why a factorization was refused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CholeskyFailure {
    /// Pivot `index` fell to or below the rank tolerance.
    NotPositiveDefinite { index: usize },
}

impl<T: Real> Cholesky<T> {
    /// Factors a symmetric matrix. Only the lower triangle is read.
    ///
    /// `rank_tol` is relative to the largest diagonal entry; a pivot at or
    /// below `rank_tol * max_diag` is reported as a rank defect. Pass zero to
    /// only reject non-positive pivots.
    pub fn factor(a: &Matrix<T>, rank_tol: T) -> std::result::Result<Self, CholeskyFailure> {
        assert!(a.is_square(), "cholesky of non-square matrix");
        let n = a.rows();
        let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(T::zero(), T::max);
        let floor = rank_tol * max_diag;
        let mut l = Matrix::identity(n);
        let mut diag = vec![T::zero(); n];
        // w[p] = L[j][p] * D[p] for the current row j
        let mut w = vec![T::zero(); n];
        for j in 0..n {
            let mut d = a[(j, j)];
            for p in 0..j {
                w[p] = l[(j, p)] * diag[p];
                d = d - w[p] * l[(j, p)];
            }
            if !(d > floor) || !d.is_finite() {
                return Err(CholeskyFailure::NotPositiveDefinite { index: j });
            }
            diag[j] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s = s - l[(i, p)] * w[p];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { lower: l, diag })
    }

    /// Unit lower-triangular factor.
    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    /// Pivots, the diagonal of `D`.
    pub fn pivots(&self) -> &[T] {
        &self.diag
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let l = &self.lower;
        let n = l.rows();
        assert_eq!(b.len(), n);
        for i in 0..n {
            let mut s = b[i];
            for p in 0..i {
                s = s - l[(i, p)] * b[p];
            }
            b[i] = s;
        }
        for i in 0..n {
            b[i] = b[i] / self.diag[i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for p in (i + 1)..n {
                s = s - l[(p, i)] * b[p];
            }
            b[i] = s;
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Explicit inverse, symmetrized.
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.lower.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = T::zero());
            e[j] = T::one();
            self.solve_in_place(&mut e);
            inv.set_column(j, &e);
        }
        inv.symmetrize();
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_and_transpose() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let b = m(&[&[1.0, 0.0, 2.0], &[0.0, 1.0, -1.0]]);
        let c = a.matmul(&b);
        assert_eq!(c, m(&[&[1.0, 2.0, 0.0], &[3.0, 4.0, 2.0], &[5.0, 6.0, 4.0]]));
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.mul_vec(&[1.0, 1.0]), vec![3.0, 7.0, 11.0]);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = m(&[&[4.0, 2.0, 0.4], &[2.0, 5.0, 1.0], &[0.4, 1.0, 3.0]]);
        let ch = Cholesky::factor(&a, 0.0).unwrap();
        let l = ch.lower();
        let ldlt = l.matmul(&Matrix::from_diagonal(ch.pivots())).matmul(&l.transpose());
        assert!(ldlt.relative_frobenius_distance(&a) < 1e-15);
        let b = [1.0, -2.0, 0.5];
        let x = ch.solve(&b);
        let back = a.mul_vec(&x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
        let inv = ch.inverse();
        assert!(a.matmul(&inv).relative_frobenius_distance(&Matrix::identity(3)) < 1e-14);
    }

    #[test]
    fn cholesky_flags_rank_defect() {
        // rank one: v vᵀ with v = (60, 50)
        let a = m(&[&[3600.0, 3000.0], &[3000.0, 2500.0]]);
        let err = Cholesky::factor(&a, 1e-12).unwrap_err();
        assert_eq!(err, CholeskyFailure::NotPositiveDefinite { index: 1 });
        let neg = m(&[&[-1.0]]);
        assert!(Cholesky::factor(&neg, 0.0).is_err());
    }

    #[test]
    fn scalar_solve_is_one_division() {
        let ch = Cholesky::factor(&m(&[&[18.0]]), 0.0).unwrap();
        assert_eq!(ch.solve(&[23.0]), vec![23.0 / 18.0]);
        assert_eq!(ch.inverse()[(0, 0)], 1.0 / 18.0);
    }

    #[test]
    fn add_outer_and_symmetrize() {
        let mut a = Matrix::<f64>::zeros(2, 2);
        a.add_outer(2.0, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(a, m(&[&[6.0, 8.0], &[12.0, 16.0]]));
        a.symmetrize();
        assert_eq!(a[(0, 1)], 10.0);
        assert_eq!(a[(1, 0)], 10.0);
    }

    #[test]
    fn works_in_single_precision() {
        let a = Matrix::<f32>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let x = Cholesky::factor(&a, 0.0).unwrap().solve(&[3.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }
}
