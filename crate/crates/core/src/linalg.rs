//! Small dense linear algebra over [`Real`] scalars.
//!
//! The matrices handled here are tiny (N up to about 20, or 2N for the
//! augmented covariance exponential), so everything is row-major `Vec`
//! storage with straightforward O(n^3) kernels.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:?} ", self.data[i * self.cols + j])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
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
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
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

    /// Builds a matrix from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the `nr x nc` block whose top-left corner is `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        Self::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Self) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[T], y: &[T]) -> T {
        dot(x, &self.matvec(y))
    }

    pub fn symmetrize(&self) -> Self {
        let half = T::lit(0.5);
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)]) * half)
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> T {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> T {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn norm_fro(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|v| v.abs()).fold(T::zero(), T::max)
    }

    /// Operator 2-norm (largest singular value).
    pub fn norm_spectral(&self) -> T {
        self.singular_values().first().copied().unwrap_or_else(T::zero)
    }

    /// Singular values in decreasing order, from the eigenvalues of `AᵀA`.
    pub fn singular_values(&self) -> Vec<T> {
        if self.rows == 0 || self.cols == 0 {
            return Vec::new();
        }
        let gram = if self.rows >= self.cols {
            &self.transpose() * self
        } else {
            self * &self.transpose()
        };
        let mut sv: Vec<T> = gram
            .symmetric_eigen()
            .values
            .into_iter()
            .map(|ev| ev.max(T::zero()).sqrt())
            .collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        sv
    }

    /// Numerical rank with threshold `rel_tol * max(sigma_max, 1)`.
    pub fn rank(&self, rel_tol: T) -> usize {
        let sv = self.singular_values();
        let floor = sv.first().copied().unwrap_or_else(T::zero).max(T::one());
        sv.iter().filter(|&&s| s > rel_tol * floor).count()
    }

    pub fn lu(&self) -> Result<Lu<T>> {
        Lu::new(self)
    }

    pub fn inverse(&self) -> Result<Self> {
        Ok(self.lu()?.inverse())
    }

    pub fn determinant(&self) -> T {
        match self.lu() {
            Ok(lu) => lu.determinant(),
            Err(_) => T::zero(),
        }
    }

    /// Lower Cholesky factor `L` with `A = L Lᵀ`. Pivots at or below
    /// `pivot_floor` are reported as [`Error::Singular`].
    pub fn cholesky(&self, pivot_floor: T) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch("cholesky of non-square matrix".into()));
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > pivot_floor) {
                return Err(Error::Singular);
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(l)
    }

    /// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
    pub fn symmetric_eigen(&self) -> SymmetricEigen<T> {
        assert!(self.is_square(), "eigen-decomposition of non-square matrix");
        let n = self.rows;
        let mut a = self.symmetrize();
        let mut v = Self::identity(n);
        let scale = a.norm_fro();
        let tol = T::epsilon() * scale;
        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in i + 1..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() <= tol || scale == T::zero() {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
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
        SymmetricEigen {
            values: (0..n).map(|i| a[(i, i)]).collect(),
            vectors: v,
        }
    }

    /// Matrix exponential by scaling and squaring around the degree-13
    /// diagonal Padé approximant.
    pub fn expm(&self) -> Self {
        assert!(self.is_square(), "exponential of non-square matrix");
        let n = self.rows;
        if n == 0 {
            return self.clone();
        }
        const PADE13: [f64; 14] = [
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ];
        const THETA13: f64 = 5.371920351148152;
        let norm = self.norm_one().to_f64_lossy();
        let squarings = if norm > THETA13 {
            (norm / THETA13).log2().ceil().max(0.0) as i32
        } else {
            0
        };
        let a = self.scale(T::lit(0.5f64.powi(squarings)));
        let b: Vec<T> = PADE13.iter().map(|&c| T::lit(c)).collect();
        let id = Self::identity(n);
        let a2 = &a * &a;
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let u_inner = &(&a6 * &(&(&a6.scale(b[13]) + &a4.scale(b[11])) + &a2.scale(b[9])))
            + &(&(&(&a6.scale(b[7]) + &a4.scale(b[5])) + &a2.scale(b[3])) + &id.scale(b[1]));
        let u = &a * &u_inner;
        let v = &(&a6 * &(&(&a6.scale(b[12]) + &a4.scale(b[10])) + &a2.scale(b[8])))
            + &(&(&(&a6.scale(b[6]) + &a4.scale(b[4])) + &a2.scale(b[2])) + &id.scale(b[0]));
        let p = &v + &u;
        let q = &v - &u;
        let mut r = q
            .lu()
            .expect("Padé denominator is nonsingular after scaling")
            .solve_matrix(&p);
        for _ in 0..squarings {
            r = &r * &r;
        }
        r
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<'a, T: Real> Mul<&'a Matrix<T>> for &'a Matrix<T> {
    type Output = Matrix<T>;
    fn mul(self, rhs: &'a Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, rhs.rows, "matmul dimension");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += aik * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }
}

impl<'a, T: Real> Add<&'a Matrix<T>> for &'a Matrix<T> {
    type Output = Matrix<T>;
    fn add(self, rhs: &'a Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add dimension");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<'a, T: Real> Sub<&'a Matrix<T>> for &'a Matrix<T> {
    type Output = Matrix<T>;
    fn sub(self, rhs: &'a Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub dimension");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<T: Real> Neg for &Matrix<T> {
    type Output = Matrix<T>;
    fn neg(self) -> Matrix<T> {
        self.map(|v| -v)
    }
}

/// Eigenvalues (unsorted) and column eigenvectors of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
    sign: T,
}

impl<T: Real> Lu<T> {
    fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch("LU of non-square matrix".into()));
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax == T::zero() || !pmax.is_finite() {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        let v = lu[(k, j)];
                        lu[(i, j)] -= f * v;
                    }
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                let v = x[k];
                x[i] -= self.lu[(i, k)] * v;
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let v = x[k];
                x[i] -= self.lu[(i, k)] * v;
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }

    pub fn solve_matrix(&self, b: &Matrix<T>) -> Matrix<T> {
        let n = self.lu.rows;
        let mut out = Matrix::zeros(n, b.cols);
        for j in 0..b.cols {
            let col: Vec<T> = (0..n).map(|i| b[(i, j)]).collect();
            for (i, v) in self.solve(&col).into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix<T> {
        self.solve_matrix(&Matrix::identity(self.lu.rows))
    }

    pub fn determinant(&self) -> T {
        (0..self.lu.rows).fold(self.sign, |acc, i| acc * self.lu[(i, i)])
    }
}

/// Solves `L Lᵀ x = b` given the lower Cholesky factor.
pub fn cholesky_solve<T: Real>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let v = y[k];
            y[i] -= l[(i, k)] * v;
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let v = y[k];
            y[i] -= l[(k, i)] * v;
        }
        y[i] /= l[(i, i)];
    }
    y
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored. Requires a diagonally dominant system.
pub fn solve_tridiagonal<T: Real>(lower: &[T], diag: &[T], upper: &[T], rhs: &mut [T], scratch: &mut Vec<T>) {
    let n = diag.len();
    scratch.clear();
    scratch.resize(n, T::zero());
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        scratch[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * scratch[i];
        let prev = rhs[i - 1];
        rhs[i] = (rhs[i] - lower[i] * prev) / beta;
    }
    for i in (0..n - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] -= scratch[i + 1] * next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn expm_of_nilpotent_truncates() {
        let a = m(&[&[0.0, 0.0], &[-1.0, 0.0]]);
        let e = a.expm();
        assert_relative_eq!(e[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(e[(1, 0)], -1.0, epsilon = 1e-15);
        assert_relative_eq!(e[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn expm_diagonal_and_rotation() {
        let d = Matrix::diag(&[1.0, -2.0, 0.5]);
        let e = d.expm();
        for (i, v) in [1.0f64, -2.0, 0.5].iter().enumerate() {
            assert_relative_eq!(e[(i, i)], v.exp(), max_relative = 1e-14);
        }
        // large-norm rotation exercises the squaring phase
        let w = 20.0;
        let r = m(&[&[0.0, -w], &[w, 0.0]]).expm();
        assert_relative_eq!(r[(0, 0)], w.cos(), epsilon = 1e-12);
        assert_relative_eq!(r[(1, 0)], w.sin(), epsilon = 1e-12);
    }

    #[test]
    fn expm_f32_matches_f64() {
        let a = m(&[&[0.3, 1.0], &[-0.5, 0.1]]);
        let e64 = a.expm();
        let e32 = a.cast::<f32>().expm();
        for i in 0..2 {
            for j in 0..2 {
                assert!((e64[(i, j)] as f32 - e32[(i, j)]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn lu_inverse_and_det() {
        let a = m(&[&[4.0, 6.0], &[6.0, 12.0]]);
        assert_relative_eq!(a.determinant(), 12.0, max_relative = 1e-14);
        let inv = a.inverse().unwrap();
        let id = &a * &inv;
        assert_relative_eq!(id[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(id[(0, 1)], 0.0, epsilon = 1e-14);
        assert!(m(&[&[1.0, 2.0], &[2.0, 4.0]]).lu().is_err());
    }

    #[test]
    fn cholesky_round_trip() {
        let a = m(&[&[1.0, -0.5], &[-0.5, 1.0 / 3.0]]);
        let l = a.cholesky(1e-300).unwrap();
        let back = &l * &l.transpose();
        assert_relative_eq!(back[(1, 1)], 1.0 / 3.0, max_relative = 1e-14);
        let x = cholesky_solve(&l, &[1.0, 0.0]);
        assert_relative_eq!(x[0], 4.0, max_relative = 1e-12);
        assert_relative_eq!(x[1], 6.0, max_relative = 1e-12);
        assert!(m(&[&[1.0, 0.0], &[0.0, -1.0]]).cholesky(0.0).is_err());
    }

    #[test]
    fn eigen_and_singular_values() {
        let a = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let mut ev = a.symmetric_eigen().values;
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(ev[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(ev[1], 3.0, epsilon = 1e-14);
        let b = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert_relative_eq!(b.norm_spectral(), 1.0, epsilon = 1e-14);
        assert_eq!(b.rank(1e-10), 1);
        assert_eq!(Matrix::<f64>::zeros(2, 1).rank(1e-10), 0);
    }

    #[test]
    fn thomas_solves_tridiagonal() {
        let lower = [0.0, -1.0, -1.0];
        let diag = [3.0, 3.0, 3.0];
        let upper = [-1.0, -1.0, 0.0];
        let mut rhs = [2.0, 1.0, 2.0];
        let mut scratch = Vec::new();
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch);
        for v in rhs {
            assert_relative_eq!(v, 1.0, epsilon = 1e-14);
        }
    }
}
