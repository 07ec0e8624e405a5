//! Small dense matrices and the handful of factorizations the pipeline needs.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<S = f64> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dimension("matrix data length does not match shape"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[S]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(dimension("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn from_diag(diag: &[S]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
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
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<S> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|r| {
                let mut acc = S::zero();
                for (a, &b) in self.row(r).iter().zip(v) {
                    acc += *a * b;
                }
                acc
            })
            .collect()
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn trace(&self) -> S {
        let mut t = S::zero();
        for i in 0..self.rows.min(self.cols) {
            t += self[(i, i)];
        }
        t
    }
}

impl Mat<f64> {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<S> Index<(usize, usize)> for Mat<S> {
    type Output = S;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &S {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<S> IndexMut<(usize, usize)> for Mat<S> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut S {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order; `vectors` column `k` is the
/// unit eigenvector for `values[k]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

/// Cyclic Jacobi rotations. Deterministic, accurate to a few ulps for the
/// small matrices handled here.
pub fn symmetric_eigen(a: &Mat) -> Result<SymmetricEigen> {
    let n = a.rows();
    if n != a.cols() {
        return Err(dimension("eigendecomposition needs a square matrix"));
    }
    if !a.is_finite() {
        return Err(domain("matrix has non-finite entries"));
    }
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    let mut v = Mat::identity(n);
    let scale = m.max_abs();
    if scale > 0.0 {
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..i {
                    off += m[(i, j)] * m[(i, j)];
                }
            }
            if libm::sqrt(off) <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / libm::sqrt(t * t + 1.0);
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = v[(r, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    let n = a.rows();
    if n != a.cols() {
        return Err(dimension("cholesky needs a square matrix"));
    }
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(domain("matrix is not positive definite"));
        }
        let d = libm::sqrt(d);
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the Cholesky factor.
pub fn cholesky_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Solves the general square system `A x = b` by Gaussian elimination with
/// partial pivoting.
pub fn solve_dense(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if n != a.cols() || b.len() != n {
        return Err(dimension("solve_dense shape mismatch"));
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap_or(col);
        if m[(pivot, col)] == 0.0 {
            return Err(domain("singular matrix"));
        }
        if pivot != col {
            for c in 0..n {
                let tmp = m[(col, c)];
                m[(col, c)] = m[(pivot, c)];
                m[(pivot, c)] = tmp;
            }
            x.swap(col, pivot);
        }
        for r in (col + 1)..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                let v = m[(col, c)];
                m[(r, c)] -= f * v;
            }
            x[r] -= f * x[col];
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in (r + 1)..n {
            s -= m[(r, c)] * x[c];
        }
        x[r] = s / m[(r, r)];
    }
    Ok(x)
}

/// Symmetric positive-definite banded matrix stored by diagonals:
/// `bands[d][i] = A[i + d][i]` for `d = 0..=bandwidth`.
#[derive(Debug, Clone)]
pub struct SymBanded {
    n: usize,
    bands: Vec<Vec<f64>>,
}

impl SymBanded {
    pub fn new(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bands: (0..=bandwidth).map(|d| vec![0.0; n.saturating_sub(d)]).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds `value` to `A[i][j]` (and symmetrically `A[j][i]`).
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        self.bands[hi - lo][lo] += value;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d < self.bands.len() {
            self.bands[d][lo]
        } else {
            0.0
        }
    }

    /// Banded Cholesky solve; O(n·bandwidth²).
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(dimension("banded solve: rhs length"));
        }
        let w = self.bands.len() - 1;
        // l[d][i] = L[i + d][i]
        let mut l: Vec<Vec<f64>> = self.bands.clone();
        for j in 0..n {
            let mut d = l[0][j];
            for k in j.saturating_sub(w)..j {
                let ljk = l[j - k][k];
                d -= ljk * ljk;
            }
            if !(d > 0.0) {
                return Err(domain("banded matrix is not positive definite"));
            }
            let d = libm::sqrt(d);
            l[0][j] = d;
            for i in (j + 1)..n.min(j + w + 1) {
                let mut s = l[i - j][j];
                for k in i.saturating_sub(w)..j {
                    s -= l[i - k][k] * l[j - k][k];
                }
                l[i - j][j] = s / d;
            }
        }
        let mut y = b.to_vec();
        for i in 0..n {
            for k in i.saturating_sub(w)..i {
                y[i] -= l[i - k][k] * y[k];
            }
            y[i] /= l[0][i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n.min(i + w + 1) {
                y[i] -= l[k - i][i] * y[k];
            }
            y[i] /= l[0][i];
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(a: &Mat, e: &SymmetricEigen) -> f64 {
        let n = a.rows();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let u = e.vectors.col(k);
            let au = a.matvec(&u);
            for i in 0..n {
                worst = worst.max((au[i] - e.values[k] * u[i]).abs());
            }
        }
        worst
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let a = Mat::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 1.0]]).unwrap();
        let e = symmetric_eigen(&a).unwrap();
        assert!(residual(&a, &e) < 1e-12);
        assert!(e.values[0] >= e.values[1] && e.values[1] >= e.values[2]);
        let tr: f64 = e.values.iter().sum();
        assert!((tr - 8.0).abs() < 1e-12);
        let vtv = e.vectors.transpose().matmul(&e.vectors);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_solve_with_pivoting() {
        let a = Mat::from_rows(&[&[0.0, 2.0, 1.0], &[1.0, 1.0, 0.0], &[3.0, 0.0, 1.0]]).unwrap();
        let x = solve_dense(&a, &[5.0, 3.0, 6.0]).unwrap();
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip([5.0, 3.0, 6.0]) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_zero_matrix() {
        let e = symmetric_eigen(&Mat::zeros(3, 3)).unwrap();
        assert_eq!(e.values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn banded_matches_dense_cholesky() {
        let n = 9;
        let mut band = SymBanded::new(n, 2);
        let mut dense = Mat::zeros(n, n);
        for i in 0..n {
            let entries = [(i, i, 6.0 + i as f64), (i + 1, i, -1.5), (i + 2, i, 0.25)];
            for (r, c, v) in entries {
                if r < n {
                    band.add(r, c, v);
                    dense[(r, c)] += v;
                    if r != c {
                        dense[(c, r)] += v;
                    }
                }
            }
        }
        let b: Vec<f64> = (0..n).map(|i| libm::sin(i as f64) + 1.0).collect();
        let x1 = band.solve(&b).unwrap();
        let x2 = cholesky_solve(&cholesky(&dense).unwrap(), &b);
        for (a, c) in x1.iter().zip(&x2) {
            assert!((a - c).abs() < 1e-13);
        }
        assert_eq!(band.get(3, 1), dense[(3, 1)]);
    }
}
