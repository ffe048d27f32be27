//! Small dense linear algebra: the systems here have n ≤ 4, so everything is
//! written for tiny matrices and tight loops, with no allocation in the hot paths.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix; used for Jacobians (n×n) and tangent frames (n×k).
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
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
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// y = A·x
    pub fn mul_vec(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = T::zero();
            for j in 0..self.cols {
                acc += row[j] * x[j];
            }
            y[i] = acc;
        }
    }

    /// y = Aᵀ·x
    pub fn mul_transpose_vec(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for j in 0..self.cols {
            y[j] = T::zero();
        }
        for i in 0..self.rows {
            let row = self.row(i);
            for j in 0..self.cols {
                y[j] += row[j] * x[i];
            }
        }
    }

    pub fn trace(&self) -> T {
        let mut acc = T::zero();
        for i in 0..self.rows.min(self.cols) {
            acc += self[(i, i)];
        }
        acc
    }

    pub fn transpose(&self) -> Mat<T> {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

#[inline]
pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Normalizes `a` in place and returns the pre-normalization norm.
#[inline]
pub fn normalize<T: Real>(a: &mut [T]) -> T {
    let n = norm(a);
    if n > T::zero() {
        let inv = T::one() / n;
        for x in a.iter_mut() {
            *x *= inv;
        }
    }
    n
}

#[inline]
pub fn scale<T: Real>(a: &mut [T], s: T) {
    for x in a.iter_mut() {
        *x *= s;
    }
}

/// y += s·x
#[inline]
pub fn axpy<T: Real>(y: &mut [T], s: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for i in 0..y.len() {
        y[i] += s * x[i];
    }
}

/// Angle between oriented unit vectors, in [0, π].
#[inline]
pub fn angle<T: Real>(a: &[T], b: &[T]) -> T {
    let c = dot(a, b);
    c.min(T::one()).max(-T::one()).acos()
}

/// Orthonormal frame of `k` column vectors in dimension `n`, stored column-wise.
#[derive(Debug, Clone)]
pub struct Frame<T> {
    pub dim: usize,
    pub cols: Vec<Vec<T>>,
}

impl<T: Real> Frame<T> {
    pub fn identity(dim: usize, k: usize) -> Self {
        let mut cols = Vec::with_capacity(k);
        for j in 0..k {
            let mut c = vec![T::zero(); dim];
            c[j] = T::one();
            cols.push(c);
        }
        Frame { dim, cols }
    }

    pub fn k(&self) -> usize {
        self.cols.len()
    }
}

/// In-place modified Gram-Schmidt QR of the frame. The frame is replaced by Q
/// (orthonormal columns, R-diagonal forced positive by sign flips); returns the
/// diagonal of R, all entries > 0 for a full-rank frame.
pub fn qr_mgs<T: Real>(frame: &mut Frame<T>) -> Vec<T> {
    let k = frame.k();
    let mut diag = Vec::with_capacity(k);
    for j in 0..k {
        // Subtract projections onto the already-orthonormalized columns.
        for i in 0..j {
            let (head, tail) = frame.cols.split_at_mut(j);
            let qi = &head[i];
            let cj = &mut tail[0];
            let r = dot(qi, cj);
            axpy(cj, -r, qi);
        }
        let r = normalize(&mut frame.cols[j]);
        diag.push(r);
    }
    diag
}

/// LU factorization with partial pivoting, for the tiny n here.
pub struct Lu<T> {
    lu: Mat<T>,
    perm: Vec<usize>,
    sign: T,
}

impl<T: Real> Lu<T> {
    pub fn new(a: &Mat<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.cols(),
            });
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        for col in 0..n {
            let mut pivot = col;
            let mut best = lu[(col, col)].abs();
            for r in col + 1..n {
                let v = lu[(r, col)].abs();
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if best == T::zero() {
                return Err(Error::SingularMatrix("lu factorization"));
            }
            if pivot != col {
                for j in 0..n {
                    let tmp = lu[(col, j)];
                    lu[(col, j)] = lu[(pivot, j)];
                    lu[(pivot, j)] = tmp;
                }
                perm.swap(col, pivot);
                sign = -sign;
            }
            let d = lu[(col, col)];
            for r in col + 1..n {
                let f = lu[(r, col)] / d;
                lu[(r, col)] = f;
                for j in col + 1..n {
                    let s = lu[(col, j)];
                    lu[(r, j)] -= f * s;
                }
            }
        }
        Ok(Lu { lu, perm, sign })
    }

    pub fn det(&self) -> T {
        let n = self.lu.rows();
        let mut d = self.sign;
        for i in 0..n {
            d *= self.lu[(i, i)];
        }
        d
    }

    /// Ratio of the largest to smallest |pivot| — a cheap conditioning proxy.
    pub fn pivot_ratio(&self) -> T {
        let n = self.lu.rows();
        let mut lo = self.lu[(0, 0)].abs();
        let mut hi = lo;
        for i in 1..n {
            let p = self.lu[(i, i)].abs();
            lo = lo.min(p);
            hi = hi.max(p);
        }
        if lo == T::zero() {
            T::infinity()
        } else {
            hi / lo
        }
    }

    pub fn solve(&self, b: &[T], x: &mut [T]) {
        let n = self.lu.rows();
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
    }
}

/// Solves A·x = b by LU with partial pivoting.
pub fn solve<T: Real>(a: &Mat<T>, b: &[T]) -> Result<Vec<T>> {
    let lu = Lu::new(a)?;
    let mut x = vec![T::zero(); b.len()];
    lu.solve(b, &mut x);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn qr_orthonormal_and_positive_diag() {
        let mut f = Frame::<f64> {
            dim: 3,
            cols: vec![
                vec![1.0, 2.0, 2.0],
                vec![-1.0, 0.5, 3.0],
                vec![0.25, -4.0, 1.0],
            ],
        };
        let diag = qr_mgs(&mut f);
        for d in &diag {
            assert!(*d > 0.0);
        }
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(dot(&f.cols[i], &f.cols[j]), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn lu_solves_and_det_matches() {
        let a = Mat::from_rows(&[&[2.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 4.0]]);
        let lu = Lu::new(&a).unwrap();
        // det by cofactor: 2·(12−1) − 1·(4−0) = 18
        assert_relative_eq!(lu.det(), 18.0, epsilon = 1e-12);
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        lu.solve(&b, &mut x);
        let mut back = [0.0; 3];
        a.mul_vec(&x, &mut back);
        for i in 0..3 {
            assert_relative_eq!(back[i], b[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(Lu::new(&a).is_err());
    }

    #[test]
    fn angle_clamps_roundoff() {
        let a = [1.0, 0.0];
        assert_eq!(angle(&a, &a), 0.0);
        let b = [-1.0, 0.0];
        assert_relative_eq!(angle(&a, &b), std::f64::consts::PI);
    }
}
