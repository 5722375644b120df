//! Column-major dense matrices and the handful of kernels the decompositions need.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real matrix stored column by column.
///
/// Every constructor that takes external data rejects NaN and infinities, so
/// any `DenseMatrix` handed to the decompositions is finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_column_major(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let mut values = Vec::with_capacity(rows * columns.len());
        for c in columns {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    found: c.len(),
                });
            }
            values.extend_from_slice(c);
        }
        Self::from_column_major(rows, columns.len(), values)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.values[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.rows..(j + 1) * self.rows]
    }

    /// Mutable access to two distinct columns at once.
    pub fn col_pair_mut(&mut self, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
        assert!(a < b && b < self.cols);
        let r = self.rows;
        let (lo, hi) = self.values.split_at_mut(b * r);
        (&mut lo[a * r..(a + 1) * r], &mut hi[..r])
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.cols).map(move |j| self.col(j))
    }

    /// Columns `range` as a new matrix.
    pub fn col_range(&self, range: std::ops::Range<usize>) -> Self {
        let values = self.values[range.start * self.rows..range.end * self.rows].to_vec();
        Self::from_raw(self.rows, range.len(), values)
    }

    pub fn push_column(&mut self, column: &[f64]) -> Result<()> {
        if self.cols > 0 && column.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                found: column.len(),
            });
        }
        if column.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if self.cols == 0 {
            self.rows = column.len();
        }
        self.values.extend_from_slice(column);
        self.cols += 1;
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            let rcol = rhs.col(j);
            let ocol = out.col_mut(j);
            for (k, &w) in rcol.iter().enumerate() {
                if w != 0.0 {
                    axpy(w, self.col(k), ocol);
                }
            }
        }
        out
    }

    /// `selfᵀ * rhs` without forming the transpose.
    pub fn t_matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "t_matmul row dimension");
        Self::from_fn(self.cols, rhs.cols, |i, j| dot(self.col(i), rhs.col(j)))
    }

    /// `selfᵀ * v`.
    pub fn t_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len());
        self.columns().map(|c| dot(c, v)).collect()
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        let mut out = vec![0.0; self.rows];
        for (j, &w) in v.iter().enumerate() {
            axpy(w, self.col(j), &mut out);
        }
        out
    }

    /// Scales column `j` by `s[j]`.
    pub fn scale_columns(&mut self, s: &[f64]) {
        assert_eq!(s.len(), self.cols);
        for (j, &w) in s.iter().enumerate() {
            self.col_mut(j).iter_mut().for_each(|x| *x *= w);
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape());
        let values = self
            .values
            .iter()
            .zip(&rhs.values)
            .map(|(a, b)| a - b)
            .collect();
        Self::from_raw(self.rows, self.cols, values)
    }

    /// Largest entry of `|selfᵀself − I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.cols {
            for j in i..self.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(self.col(i), self.col(j)) - target).abs());
            }
        }
        worst
    }

    /// Largest off-diagonal entry of `|selfᵀself|`.
    pub fn max_off_diagonal_gram(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.cols {
            for j in i + 1..self.cols {
                worst = worst.max(dot(self.col(i), self.col(j)).abs());
            }
        }
        worst
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_column_slice(self.rows, self.cols, &self.values)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.values[j * self.rows + i]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.values[j * self.rows + i]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators so the compiler can vectorize
    let mut acc = [0.0_f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Euclidean norm with scaling, safe against overflow for huge entries.
pub fn norm2(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let ss: f64 = x.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * ss.sqrt()
}

/// Householder QR of a tall (or square) matrix.
///
/// Returns the thin factors `Q` (rows × cols, orthonormal columns) and `R`
/// (cols × cols, upper triangular).
pub fn householder_qr(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (m, n) = a.shape();
    assert!(m >= n, "householder_qr expects rows >= cols");
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);

    for k in 0..n {
        let x = &work.col(k)[k..];
        let alpha = norm2(x);
        let mut v = x.to_vec();
        if alpha == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vnorm = norm2(&v);
        v.iter_mut().for_each(|e| *e /= vnorm);
        for j in k..n {
            let col = &mut work.col_mut(j)[k..];
            let p = 2.0 * dot(&v, col);
            axpy(-p, &v, col);
        }
        reflectors.push(v);
    }

    let mut r = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            r[(i, j)] = work[(i, j)];
        }
    }

    // accumulate Q = H_0 H_1 ... H_{n-1} applied to the first n unit vectors
    let mut q = DenseMatrix::zeros(m, n);
    for j in 0..n {
        q[(j, j)] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &reflectors[k];
        if v.is_empty() {
            continue;
        }
        for j in 0..n {
            let col = &mut q.col_mut(j)[k..];
            let p = 2.0 * dot(v, col);
            axpy(-p, v, col);
        }
    }
    (q, r)
}

/// Orthonormal basis for the columns of `a` (thin Q of a Householder QR).
pub fn orthonormalize(a: &DenseMatrix) -> DenseMatrix {
    householder_qr(a).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DenseMatrix {
        DenseMatrix::from_fn(5, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 4.5 + (i == j) as u8 as f64)
    }

    #[test]
    fn rejects_non_finite_and_bad_lengths() {
        assert!(matches!(
            DenseMatrix::from_column_major(2, 2, vec![1.0, f64::NAN, 0.0, 1.0]),
            Err(Error::NonFinite)
        ));
        assert!(matches!(
            DenseMatrix::from_column_major(2, 2, vec![1.0]),
            Err(Error::DimensionMismatch { expected: 4, found: 1 })
        ));
    }

    #[test]
    fn qr_reconstructs_and_is_orthonormal() {
        let a = sample();
        let (q, r) = householder_qr(&a);
        assert!(q.orthonormality_residual() < 1e-14);
        let back = q.matmul(&r);
        assert!(back.sub(&a).max_abs() < 1e-13);
        for j in 0..3 {
            for i in j + 1..3 {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn products_agree() {
        let a = sample();
        let b = DenseMatrix::from_fn(5, 2, |i, j| (i + 2 * j) as f64);
        let direct = a.transpose().matmul(&b);
        assert!(direct.sub(&a.t_matmul(&b)).max_abs() < 1e-12);
        let v = [1.0, -2.0, 0.5];
        let mv = a.matvec(&v);
        let as_mat = a.matmul(&DenseMatrix::from_columns(&[v.to_vec()]).unwrap());
        assert_eq!(mv, as_mat.col(0));
    }

    #[test]
    fn norm2_handles_extreme_scales() {
        assert!((norm2(&[3e200, 4e200]) / 5e200 - 1.0).abs() < 1e-15);
        assert_eq!(norm2(&[0.0, 0.0]), 0.0);
    }
}
