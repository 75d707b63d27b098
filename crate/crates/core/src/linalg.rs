//! Dense linear algebra used by the rest of the crate.
//!
//! [`Matrix`] is row-major: entry `(r, c)` lives at `data[r * cols + c]`.
//! Products go through `matrixmultiply::dgemm`, which accepts arbitrary
//! strides, so transposed operands never get materialized.

use bitvec::vec::BitVec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};

/// ReLU activation pattern: bit `j` set iff unit `j` has strictly positive
/// pre-activation.
pub type Pattern = BitVec<u64>;

pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-10;
pub const DEFAULT_SPECTRAL_MAX_ITER: usize = 10_000;
/// Seed of the deterministic power-iteration start vector.
const SPECTRAL_START_SEED: u64 = 0x005e_ed0f_5ec7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_vec",
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite matrix entry {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "Matrix::from_rows",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Rank-one matrix `scale * u v^T`.
    pub fn outer(u: &[f64], v: &[f64], scale: f64) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for (r, ur) in u.iter().enumerate() {
            for (c, vc) in v.iter().enumerate() {
                m.data[r * v.len() + c] = scale * ur * vc;
            }
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

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn check_same_shape(&self, other: &Matrix, context: &'static str) -> Result<()> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.rows,
                found: other.rows,
            });
        }
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.cols,
                found: other.cols,
            });
        }
        Ok(())
    }

    /// `self - other`.
    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "Matrix::sub")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "Matrix::axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        self.data
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `A^T y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "matvec_t dimension");
        let mut out = vec![0.0; self.cols];
        for (r, yr) in y.iter().enumerate() {
            if *yr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += yr * a;
            }
        }
        out
    }
}

/// Which operand of a product is read transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// `c <- alpha * op(a) op(b) + beta * c`.
pub fn gemm(alpha: f64, a: &Matrix, op_a: Op, b: &Matrix, op_b: Op, beta: f64, c: &mut Matrix) {
    let (m, k, rsa, csa) = match op_a {
        Op::N => (a.rows, a.cols, a.cols as isize, 1),
        Op::T => (a.cols, a.rows, 1, a.cols as isize),
    };
    let (kb, n, rsb, csb) = match op_b {
        Op::N => (b.rows, b.cols, b.cols as isize, 1),
        Op::T => (b.cols, b.rows, 1, b.cols as isize),
    };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c.data {
            *v *= beta;
        }
        return;
    }
    // SAFETY: dimensions and strides above describe exactly the buffers of
    // `a`, `b` and `c`, which are valid for the duration of the call; `c` is
    // uniquely borrowed and does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// `op(a) op(b)` as a fresh matrix.
pub fn matmul(a: &Matrix, op_a: Op, b: &Matrix, op_b: Op) -> Matrix {
    let m = if op_a == Op::N { a.rows } else { a.cols };
    let n = if op_b == Op::N { b.cols } else { b.rows };
    let mut c = Matrix::zeros(m, n);
    gemm(1.0, a, op_a, b, op_b, 0.0, &mut c);
    c
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    norm2(&a.data)
}

/// A linear map that can be applied forwards and transposed, without
/// necessarily being stored densely.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `out = A x`, `x.len() == ncols`.
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    /// `out = A^T y`, `y.len() == nrows`.
    fn apply_t(&self, y: &[f64]) -> Vec<f64>;
}

impl LinearOperator for Matrix {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matvec(x)
    }
    fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        self.matvec_t(y)
    }
}

#[derive(Debug, Clone)]
pub struct SpectralEstimate {
    pub sigma: f64,
    /// Unit right singular vector estimate; reusable as a warm start.
    pub vector: Vec<f64>,
    pub iterations: usize,
    /// Relative Rayleigh residual `|A^T A u - theta u| / theta` at exit.
    pub residual: f64,
}

/// Deterministic start vector for power iteration in dimension `n`.
pub fn spectral_start(n: usize) -> Vec<f64> {
    let mut rng = Rng::with_stream(SPECTRAL_START_SEED, Stream::PowerIteration);
    let mut v = rng.gaussian_vec(n);
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    v
}

/// Largest singular value of `op` by power iteration on `A^T A`.
///
/// With `u` the unit iterate and `theta = |A u|^2` its Rayleigh quotient,
/// iteration stops once the relative residual `r = |A^T A u - theta u| / theta`
/// satisfies `r^2 <= tol`. For a symmetric matrix the Rayleigh quotient error
/// is second order in the residual, so this targets a relative error of order
/// `tol` in `sigma^2` without paying for a first-order residual of `tol`.
pub fn power_iteration<A: LinearOperator + ?Sized>(
    op: &A,
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralEstimate> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tol must be > 0, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be >= 1"));
    }
    let n = op.ncols();
    if n == 0 || op.nrows() == 0 {
        return Err(Error::invalid("power iteration on an empty operator"));
    }
    let mut u = match start {
        Some(s) if s.len() == n && norm2(s) > 0.0 => {
            let ns = norm2(s);
            s.iter().map(|x| x / ns).collect()
        }
        _ => spectral_start(n),
    };
    let mut theta = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let w = op.apply(&u);
        let t = op.apply_t(&w);
        theta = dot(&w, &w);
        if theta == 0.0 {
            // u is in the null space; for a random start this means A = 0.
            return Ok(SpectralEstimate {
                sigma: 0.0,
                vector: u,
                iterations: it,
                residual: 0.0,
            });
        }
        let res_sq: f64 = t
            .iter()
            .zip(&u)
            .map(|(ti, ui)| (ti - theta * ui).powi(2))
            .sum();
        residual = res_sq.sqrt() / theta;
        let nt = norm2(&t);
        u = t.into_iter().map(|x| x / nt).collect();
        if residual * residual <= tol {
            return Ok(SpectralEstimate {
                sigma: theta.sqrt(),
                vector: u,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        estimate: theta.sqrt(),
        residual,
        vector: u,
    })
}

/// `sigma_max(A)` from a deterministic start.
pub fn spectral_norm(a: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if a.data.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    power_iteration(a, None, tol, max_iter).map(|e| e.sigma)
}

/// [`spectral_norm`] at the default tolerance and iteration cap.
pub fn spectral_norm_default(a: &Matrix) -> Result<f64> {
    spectral_norm(a, DEFAULT_SPECTRAL_TOL, DEFAULT_SPECTRAL_MAX_ITER)
}

/// `rows x cols` matrix of i.i.d. `N(0, variance)` entries, filled row-major
/// from `rng`.
pub fn gaussian_matrix(rows: usize, cols: usize, variance: f64, rng: &mut Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "gaussian_matrix needs nonzero dims, got {rows}x{cols}"
        )));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::invalid(format!("variance must be > 0, got {variance}")));
    }
    let sd = variance.sqrt();
    let data = (0..rows * cols).map(|_| sd * rng.gaussian()).collect();
    Ok(Matrix { rows, cols, data })
}

pub fn pattern_diff_count(a: &Pattern, b: &Pattern) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "pattern_diff_count",
            expected: a.len(),
            found: b.len(),
        });
    }
    let diff: usize = a
        .as_raw_slice()
        .iter()
        .zip(b.as_raw_slice())
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum();
    Ok(diff)
}

/// Pattern from a pre-activation vector with `sigma'(0) = 0`.
pub fn pattern_of(pre: &[f64]) -> Pattern {
    pre.iter().map(|z| *z > 0.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_identity() {
        let s = spectral_norm_default(&Matrix::identity(5)).unwrap();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_diagonal() {
        let s = spectral_norm_default(&Matrix::diag(&[3.0, -5.0])).unwrap();
        assert_relative_eq!(s, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn spectral_zero_is_exact() {
        assert_eq!(spectral_norm_default(&Matrix::zeros(3, 4)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_rank_one() {
        let u = [3.0, 4.0];
        let v = [1.0, 0.0, 0.0];
        // |u| |v| = 5
        let a = Matrix::outer(&u, &v, 2.0);
        assert_relative_eq!(spectral_norm_default(&a).unwrap(), 10.0, epsilon = 1e-10);
    }

    #[test]
    fn spectral_rejects_bad_args() {
        let a = Matrix::identity(2);
        assert!(spectral_norm(&a, 0.0, 10).is_err());
        assert!(spectral_norm(&a, 1e-3, 0).is_err());
    }

    #[test]
    fn nonconvergence_carries_iterate() {
        // Two equal-magnitude singular values with a start that mixes them
        // slowly: force failure with a tiny budget.
        let a = Matrix::diag(&[1.0, 0.999_999, 0.5]);
        match power_iteration(&a, Some(&[1.0, 1.0, 1.0]), 1e-30, 3) {
            Err(Error::NonConvergence {
                iterations, vector, ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(vector.len(), 3);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 3)), 0.0);
        assert_relative_eq!(frobenius_norm(&Matrix::identity(7)), 7f64.sqrt());
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_relative_eq!(frobenius_norm(&a), 30f64.sqrt());
    }

    #[test]
    fn gaussian_matrix_errors() {
        let mut rng = Rng::new(0);
        assert!(gaussian_matrix(0, 3, 1.0, &mut rng).is_err());
        assert!(gaussian_matrix(3, 0, 1.0, &mut rng).is_err());
        assert!(gaussian_matrix(3, 3, 0.0, &mut rng).is_err());
    }

    #[test]
    fn gaussian_matrix_deterministic() {
        let a = gaussian_matrix(4, 6, 0.5, &mut Rng::new(17)).unwrap();
        let b = gaussian_matrix(4, 6, 0.5, &mut Rng::new(17)).unwrap();
        assert_eq!(a, b);
        let c = gaussian_matrix(4, 6, 0.5, &mut Rng::new(18)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_matrix_moments() {
        let n = 10_000;
        let a = gaussian_matrix(100, 100, 1.0, &mut Rng::new(5)).unwrap();
        let mean = a.as_slice().iter().sum::<f64>() / n as f64;
        let var = a.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() <= 0.05, "var {var}");
    }

    #[test]
    fn pattern_diffs() {
        let p = |s: &str| -> Pattern { s.chars().map(|c| c == '1').collect() };
        assert_eq!(pattern_diff_count(&p("10110"), &p("10110")).unwrap(), 0);
        assert_eq!(pattern_diff_count(&p("10110"), &p("01001")).unwrap(), 5);
        assert_eq!(pattern_diff_count(&p("10110"), &p("10011")).unwrap(), 2);
        assert!(pattern_diff_count(&p("101"), &p("1010")).is_err());
        // spans more than one storage word
        let a: Pattern = (0..130).map(|i| i % 3 == 0).collect();
        let b: Pattern = (0..130).map(|i| i % 3 != 0).collect();
        assert_eq!(pattern_diff_count(&a, &b).unwrap(), 130);
    }

    #[test]
    fn pattern_zero_is_inactive() {
        let p = pattern_of(&[0.0, 1e-300, -1.0, 2.0]);
        assert_eq!(p.iter().map(|b| *b).collect::<Vec<_>>(), vec![false, true, false, true]);
    }

    #[test]
    fn gemm_matches_naive() {
        let mut rng = Rng::new(2);
        let a = gaussian_matrix(5, 3, 1.0, &mut rng).unwrap();
        let b = gaussian_matrix(5, 4, 1.0, &mut rng).unwrap();
        let c = matmul(&a, Op::T, &b, Op::N);
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = (0..5).map(|k| a.get(k, i) * b.get(k, j)).sum();
                assert_relative_eq!(c.get(i, j), want, epsilon = 1e-12);
            }
        }
        let d = matmul(&b, Op::T, &a, Op::N);
        assert_eq!(d, c.transpose());
        let e = matmul(&a, Op::N, &a, Op::T);
        for i in 0..5 {
            for j in 0..5 {
                assert_relative_eq!(e.get(i, j), dot(a.row(i), a.row(j)), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn matvec_pair() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(a.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(a.matvec_t(&[1.0, -1.0]), vec![-3.0, -3.0, -3.0]);
    }
}
