//! Small dense matrices over any [`Real`] scalar.
//!
//! The mechanics code is written once against [`Real`] and runs both on
//! plain `f64` values and on graph columns ([`Var`]), where each "scalar" is
//! a `batch×1` column and the arithmetic records differentiable nodes.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::autodiff::Var;
use crate::error::{Error, Result};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Mul<f64, Output = Self>
{
    /// A zero carrying the same context (graph, batch shape) as `self`.
    fn zero_like(self) -> Self;

    fn add_const(self, c: f64) -> Self;
}

impl Real for f64 {
    fn zero_like(self) -> Self {
        0.0
    }

    fn add_const(self, c: f64) -> Self {
        self + c
    }
}

impl Real for Var<'_> {
    fn zero_like(self) -> Self {
        self.zeros_like()
    }

    fn add_const(self, c: f64) -> Self {
        self.add_scalar(c)
    }
}

/// Sum of `terms`, or a zero shaped like `like` when there are none.
pub fn sum_or_zero<T: Real>(terms: impl IntoIterator<Item = T>, like: T) -> T {
    terms
        .into_iter()
        .reduce(|a, b| a + b)
        .unwrap_or_else(|| like.zero_like())
}

pub fn dot<T: Real>(a: &[T], b: &[T], like: T) -> T {
    debug_assert_eq!(a.len(), b.len());
    sum_or_zero(a.iter().zip(b).map(|(&x, &y)| x * y), like)
}

/// Row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

pub type Matrix = SquareMatrix<f64>;

impl<T: Copy> SquareMatrix<T> {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("matrix rows must all have length n".into()));
        }
        Ok(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[i * self.n + j] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> SquareMatrix<U> {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T: Real> SquareMatrix<T> {
    /// `self[rows, cols] · v` for index ranges of the matrix.
    pub fn block_mul(
        &self,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
        v: &[T],
        like: T,
    ) -> Vec<T> {
        debug_assert_eq!(cols.len(), v.len());
        rows.map(|i| sum_or_zero(cols.clone().zip(v).map(|(j, &x)| self.get(i, j) * x), like))
            .collect()
    }

    pub fn mul_vec(&self, v: &[T], like: T) -> Vec<T> {
        self.block_mul(0..self.n, 0..self.n, v, like)
    }

    /// `uᵀ · self · v`
    pub fn quadratic_form(&self, u: &[T], v: &[T], like: T) -> T {
        dot(u, &self.mul_vec(v, like), like)
    }
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self::from_fn(n, |_, _| 0.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for j in 0..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Lower-triangular `L` with `L·Lᵀ = self`, or `None` when a pivot is
    /// not strictly positive.
    pub fn cholesky(&self) -> Option<Matrix> {
        let n = self.n;
        let mut l = Matrix::zeros(n);
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if !(d > 0.0) {
                return None;
            }
            let d = d.sqrt();
            l.set(j, j, d);
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / d);
            }
        }
        Some(l)
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
    /// ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = self.clone();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off += a.get(i, j) * a.get(i, j);
                    }
                }
            }
            if off < 1e-30 * (1.0 + a.max_abs()).powi(2) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a.get(p, q);
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        eig.sort_by(f64::total_cmp);
        eig
    }
}

/// Square-root-free Cholesky (`A = L·D·Lᵀ`) factorization of a symmetric
/// matrix, returning unit-lower `L` (strict part) and the pivots `D`.
pub fn ldlt<T: Real>(a: &SquareMatrix<T>) -> (SquareMatrix<T>, Vec<T>) {
    let n = a.dim();
    let like = a.get(0, 0);
    let mut l = SquareMatrix::from_fn(n, |_, _| like.zero_like());
    let mut d: Vec<T> = Vec::with_capacity(n);
    for j in 0..n {
        let dj = a.get(j, j) - sum_or_zero((0..j).map(|k| l.get(j, k) * l.get(j, k) * d[k]), like);
        d.push(dj);
        for i in j + 1..n {
            let s = a.get(i, j) - sum_or_zero((0..j).map(|k| l.get(i, k) * l.get(j, k) * d[k]), like);
            l.set(i, j, s / dj);
        }
    }
    (l, d)
}

/// Solves `A x = b` given the factors returned by [`ldlt`].
pub fn ldlt_solve<T: Real>(l: &SquareMatrix<T>, d: &[T], b: &[T]) -> Vec<T> {
    let n = d.len();
    let like = b[0];
    let mut y: Vec<T> = Vec::with_capacity(n);
    for i in 0..n {
        let yi = b[i] - sum_or_zero((0..i).map(|k| l.get(i, k) * y[k]), like);
        y.push(yi);
    }
    let z: Vec<T> = y.iter().zip(d).map(|(&yi, &di)| yi / di).collect();
    let mut x = z.clone();
    for i in (0..n).rev() {
        x[i] = z[i] - sum_or_zero((i + 1..n).map(|k| l.get(k, i) * x[k]), like);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_round_trip() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let l = a.cholesky().unwrap();
        assert_eq!(l.as_slice(), &[2.0, 0.0, 1.0, 1.0]);
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]])
            .unwrap()
            .cholesky()
            .is_none());
    }

    #[test]
    fn ldlt_solves() {
        let a = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.2],
            vec![0.5, -0.2, 2.0],
        ])
        .unwrap();
        let b = [1.0, -2.0, 0.5];
        let (l, d) = ldlt(&a);
        let x = ldlt_solve(&l, &d, &b);
        let back = a.mul_vec(&x, 0.0);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = a.symmetric_eigenvalues();
        assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
        let a = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.2],
            vec![0.5, -0.2, 2.0],
        ])
        .unwrap();
        let e = a.symmetric_eigenvalues();
        assert!((e.iter().sum::<f64>() - 9.0).abs() < 1e-12);
    }
}
