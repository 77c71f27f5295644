//! Dense real linear algebra for the small systems (n ≤ 10) handled here.
//!
//! Everything is value-semantic and allocation-light: a [`Matrix`] owns a
//! row-major `Vec` and vectors are plain slices.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("matrix is not Hurwitz (largest eigenvalue real part {0:e})")]
    NotHurwitz(f64),
    #[error("linear system is singular")]
    Singular,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(LinalgError::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[S]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(LinalgError::Dimension(format!(
                    "row {i} has {} entries, expected {ncols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(nrows, ncols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn diag(values: &[S]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
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

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<S>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: S) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn trace(&self) -> S {
        (0..self.rows.min(self.cols)).fold(S::zero(), |acc, i| acc + self[(i, i)])
    }

    pub fn frobenius_norm(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &v| acc + v * v).sqrt()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(self.matmul_unchecked(rhs))
    }

    fn matmul_unchecked(&self, rhs: &Self) -> Self {
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == S::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] = out.data[i * rhs.cols + j] + a * rhs[(k, j)];
                }
            }
        }
        out
    }

    /// `M·v`.
    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(v.len(), self.cols, "vector length must match column count");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).fold(S::zero(), |acc, (&a, &b)| acc + a * b))
            .collect()
    }

    /// `xᵀ M x`.
    pub fn quad_form(&self, x: &[S]) -> S {
        let mx = self.mul_vec(x);
        dot(x, &mx)
    }

    pub fn max_asymmetry(&self) -> S {
        let mut worst = S::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetric_part(&self) -> Self {
        let t = self.transpose();
        let half = S::lit(0.5);
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&t.data).map(|(&a, &b)| (a + b) * half).collect(),
        }
    }

    fn require_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols })
        }
    }

    fn require_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(LinalgError::NonFinite)
        }
    }
}

impl<S> Index<(usize, usize)> for Matrix<S> {
    type Output = S;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Matrix<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

impl<S: Scalar> Mul for &Matrix<S> {
    type Output = Matrix<S>;
    fn mul(self, rhs: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        self.matmul_unchecked(rhs)
    }
}

impl<S: Scalar> Add for &Matrix<S> {
    type Output = Matrix<S>;
    fn add(self, rhs: &Matrix<S>) -> Matrix<S> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "matrix sum dimension mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<S: Scalar> Sub for &Matrix<S> {
    type Output = Matrix<S>;
    fn sub(self, rhs: &Matrix<S>) -> Matrix<S> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "matrix difference dimension mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<S: fmt::Debug> fmt::Debug for Matrix<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl<S: Scalar> fmt::Display for Matrix<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let cells: Vec<String> = self.row(i).iter().map(|v| format!("{:>12.6}", v.as_f64())).collect();
            writeln!(f, "[{}]", cells.join(" "))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// vector helpers

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn vec_norm2<S: Scalar>(v: &[S]) -> S {
    dot(v, v).sqrt()
}

pub fn vec_inf_norm<S: Scalar>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |acc, &x| acc.max(x.abs()))
}

pub fn vec_sub<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn vec_add<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

// ---------------------------------------------------------------------------
// matrix exponential

const EXP_SERIES_ORDER: usize = 18;

/// `e^{Mτ}` by scaling and squaring with a fixed-order Taylor series.
///
/// The argument is scaled by `2^{-s}` until its Frobenius norm (an upper bound
/// on the 2-norm) is below 0.5, so the truncated series is accurate to well
/// below machine precision before squaring back.
pub fn mat_exp<S: Scalar>(m: &Matrix<S>, tau: S) -> Result<Matrix<S>> {
    m.require_square()?;
    m.require_finite()?;
    if !tau.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = m.rows;
    let arg = m.scale(tau);
    let norm = arg.frobenius_norm();
    let mut squarings = 0u32;
    if norm > S::lit(0.5) {
        squarings = (norm / S::lit(0.5)).log2().ceil().to_u32().unwrap_or(0);
    }
    let scaled = arg.scale(S::lit(0.5).powi(squarings as i32));

    // Horner: I + X/1 (I + X/2 (I + ... (I + X/N)))
    let eye = Matrix::identity(n);
    let mut acc = eye.clone();
    for k in (1..=EXP_SERIES_ORDER).rev() {
        let term = (&scaled * &acc).scale(S::one() / S::from_usize_lossy(k));
        acc = &eye + &term;
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// symmetric eigenproblem (cyclic Jacobi)

/// All eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues<S: Scalar>(s: &Matrix<S>) -> Result<Vec<S>> {
    s.require_square()?;
    s.require_finite()?;
    let scale = s.max_abs().max(S::min_positive_value());
    let asym = s.max_asymmetry();
    if asym > S::tol(1e-9) * scale.max(S::one()) {
        return Err(LinalgError::NotSymmetric(asym.as_f64()));
    }
    let n = s.rows;
    let mut a = s.symmetric_part();
    let fro = a.frobenius_norm();
    let target = S::tol(1e-12) * fro;
    for _sweep in 0..100 {
        let mut off = S::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == S::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (S::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<S> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(eig)
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn sym_eig_extrema<S: Scalar>(s: &Matrix<S>) -> Result<(S, S)> {
    let eig = sym_eigenvalues(s)?;
    match (eig.first(), eig.last()) {
        (Some(&lo), Some(&hi)) => Ok((lo, hi)),
        _ => Err(LinalgError::Dimension("empty matrix".into())),
    }
}

/// Induced 2-norm, `√λ_max(MᵀM)`.
pub fn spectral_norm<S: Scalar>(m: &Matrix<S>) -> Result<S> {
    m.require_finite()?;
    if m.rows == 0 || m.cols == 0 {
        return Ok(S::zero());
    }
    let gram = &m.transpose() * m;
    let (_, hi) = sym_eig_extrema(&gram)?;
    Ok(hi.max(S::zero()).sqrt())
}

/// Induced ∞-norm: maximum absolute row sum.
pub fn inf_norm<S: Scalar>(m: &Matrix<S>) -> S {
    (0..m.rows)
        .map(|i| m.row(i).iter().fold(S::zero(), |acc, &v| acc + v.abs()))
        .fold(S::zero(), S::max)
}

pub fn require_positive_definite<S: Scalar>(s: &Matrix<S>) -> Result<(S, S)> {
    let (lo, hi) = sym_eig_extrema(s)?;
    if lo <= S::zero() {
        return Err(LinalgError::NotPositiveDefinite(lo.as_f64()));
    }
    Ok((lo, hi))
}

// ---------------------------------------------------------------------------
// general eigenvalues (characteristic polynomial + Durand–Kerner)

/// Characteristic polynomial coefficients `c[0] + c[1]λ + … + c[n]λⁿ` with
/// `c[n] = 1`, via Faddeev–LeVerrier.
pub fn char_poly<S: Scalar>(m: &Matrix<S>) -> Result<Vec<S>> {
    m.require_square()?;
    m.require_finite()?;
    let n = m.rows;
    let mut coeffs = vec![S::zero(); n + 1];
    coeffs[n] = S::one();
    let eye = Matrix::identity(n);
    let mut mk = Matrix::zeros(n, n);
    for k in 1..=n {
        mk = &(m * &mk) + &eye.scale(coeffs[n - k + 1]);
        let amk = m * &mk;
        coeffs[n - k] = -amk.trace() / S::from_usize_lossy(k);
    }
    Ok(coeffs)
}

/// Eigenvalues of a small general real matrix.
pub fn eigenvalues<S: Scalar>(m: &Matrix<S>) -> Result<Vec<Complex<S>>> {
    let coeffs = char_poly(m)?;
    let n = m.rows;
    if n == 0 {
        return Ok(Vec::new());
    }
    let radius = S::one() + coeffs[..n].iter().fold(S::zero(), |acc, c| acc.max(c.abs()));
    let seed = Complex::new(S::lit(0.4), S::lit(0.9));
    let mut roots: Vec<Complex<S>> = (0..n).map(|i| seed.powu(i as u32) * radius).collect();
    let eval = |z: Complex<S>| coeffs.iter().rev().fold(Complex::new(S::zero(), S::zero()), |acc, &c| acc * z + c);
    let stop = S::tol(1e-15) * radius;
    for _ in 0..5000 {
        let mut worst = S::zero();
        for i in 0..n {
            let zi = roots[i];
            let mut denom = Complex::new(S::one(), S::zero());
            for (j, &zj) in roots.iter().enumerate() {
                if j != i {
                    denom = denom * (zi - zj);
                }
            }
            if denom.norm() == S::zero() {
                denom = Complex::new(S::epsilon(), S::zero());
            }
            let step = eval(zi) / denom;
            roots[i] = zi - step;
            worst = worst.max(step.norm());
        }
        if worst <= stop {
            break;
        }
    }
    Ok(roots)
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa<S: Scalar>(m: &Matrix<S>) -> Result<S> {
    Ok(eigenvalues(m)?.iter().fold(S::neg_infinity(), |acc, z| acc.max(z.re)))
}

/// Smallest real part over the spectrum.
pub fn min_real_part<S: Scalar>(m: &Matrix<S>) -> Result<S> {
    Ok(eigenvalues(m)?.iter().fold(S::infinity(), |acc, z| acc.min(z.re)))
}

pub fn is_hurwitz<S: Scalar>(m: &Matrix<S>) -> Result<bool> {
    Ok(spectral_abscissa(m)? < S::zero())
}

// ---------------------------------------------------------------------------
// linear solve and Lyapunov equation

/// Solves `M y = r` by Gaussian elimination with partial pivoting.
pub fn solve_linear<S: Scalar>(m: &Matrix<S>, rhs: &[S]) -> Result<Vec<S>> {
    m.require_square()?;
    let n = m.rows;
    if rhs.len() != n {
        return Err(LinalgError::Dimension(format!("rhs has {} entries, expected {n}", rhs.len())));
    }
    let mut a = m.clone();
    let mut b = rhs.to_vec();
    let scale = a.max_abs().max(S::min_positive_value());
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().partial_cmp(&a[(j, col)].abs()).expect("finite"))
            .expect("non-empty range");
        if a[(pivot, col)].abs() <= S::epsilon() * scale * S::from_usize_lossy(n) {
            return Err(LinalgError::Singular);
        }
        if pivot != col {
            for j in 0..n {
                let tmp = a[(col, j)];
                a[(col, j)] = a[(pivot, j)];
                a[(pivot, j)] = tmp;
            }
            b.swap(col, pivot);
        }
        let d = a[(col, col)];
        for i in (col + 1)..n {
            let f = a[(i, col)] / d;
            if f == S::zero() {
                continue;
            }
            for j in col..n {
                a[(i, j)] = a[(i, j)] - f * a[(col, j)];
            }
            b[i] = b[i] - f * b[col];
        }
    }
    let mut y = vec![S::zero(); n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in (i + 1)..n {
            acc = acc - a[(i, j)] * y[j];
        }
        y[i] = acc / a[(i, i)];
    }
    Ok(y)
}

/// Solves `P Ā + Āᵀ P = −Q` for symmetric positive definite `P`.
///
/// Uses the n²×n² vectorized system; intended for n ≤ 10.
pub fn solve_lyapunov<S: Scalar>(abar: &Matrix<S>, q: &Matrix<S>) -> Result<Matrix<S>> {
    abar.require_square()?;
    q.require_square()?;
    let n = abar.rows;
    if q.rows != n {
        return Err(LinalgError::Dimension(format!("Q is {}x{}, expected {n}x{n}", q.rows, q.cols)));
    }
    require_positive_definite(q)?;
    let abscissa = spectral_abscissa(abar)?;
    if abscissa >= S::zero() {
        return Err(LinalgError::NotHurwitz(abscissa.as_f64()));
    }

    // Row (i, j) of the system: Σ_k P[i,k] Ā[k,j] + Σ_k Ā[k,i] P[k,j] = −Q[i,j].
    let nn = n * n;
    let mut system = Matrix::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                system[(row, i * n + k)] = system[(row, i * n + k)] + abar[(k, j)];
                system[(row, k * n + j)] = system[(row, k * n + j)] + abar[(k, i)];
            }
        }
    }
    let rhs: Vec<S> = q.as_slice().iter().map(|&v| -v).collect();
    let sol = solve_linear(&system, &rhs)?;
    let p = Matrix::new(n, n, sol)?.symmetric_part();
    require_positive_definite(&p)?;
    Ok(p)
}

/// `‖PĀ + ĀᵀP + Q‖_F`.
pub fn lyapunov_residual<S: Scalar>(abar: &Matrix<S>, q: &Matrix<S>, p: &Matrix<S>) -> S {
    let lhs = &(&(p * abar) + &(&abar.transpose() * p)) + q;
    lhs.frobenius_norm()
}
