//! Small dense complex linear algebra.
//!
//! Every matrix in this crate is at most a handful of rows wide, so the
//! routines here favour simple, robust algorithms (cyclic Jacobi, plain
//! Cholesky) over blocked or pivoted variants.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative tolerance below which negative eigenvalues of a nominally PSD
/// matrix are treated as round-off and clipped to zero.
pub const PSD_TOLERANCE: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 64;

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row vectors. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self::from_fn(r, c, |i, j| rows[i][j])
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self::from_fn(r, c, |i, j| C64::new(rows[i][j], 0.0))
    }

    /// Column vector from a slice.
    pub fn column_vector(v: &[C64]) -> Self {
        Self::from_fn(v.len(), 1, |i, _| v[i])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Square complex matrix equal to its conjugate transpose.
///
/// The constructor symmetrizes its input, so `A == A^H` holds bit-for-bit and
/// the diagonal is exactly real.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComplexMatrix", into = "ComplexMatrix")]
pub struct HermitianMatrix(ComplexMatrix);

impl HermitianMatrix {
    /// Accepts `m` if it is square, finite and Hermitian up to a relative
    /// 1e-9 mismatch, then stores its exact Hermitian part.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("Hermitian matrix input"));
        }
        let n = m.rows();
        let scale = m.max_abs().max(1.0);
        for i in 0..n {
            for j in i..n {
                if (m[(i, j)] - m[(j, i)].conj()).norm() > 1e-9 * scale {
                    return Err(Error::NotHermitian { row: i, col: j });
                }
            }
        }
        Ok(Self::hermitian_part(&m))
    }

    /// `(m + m^H) / 2`; always Hermitian.
    pub fn hermitian_part(m: &ComplexMatrix) -> Self {
        assert!(m.is_square(), "hermitian_part of non-square matrix");
        let n = m.rows();
        let mut out = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = C64::new(m[(i, i)].re, 0.0);
            for j in i + 1..n {
                let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                out[(i, j)] = v;
                out[(j, i)] = v.conj();
            }
        }
        Self(out)
    }

    pub fn zeros(n: usize) -> Self {
        Self(ComplexMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(ComplexMatrix::identity(n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self(ComplexMatrix::identity(n).scale(s))
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        Self(ComplexMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(d[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
    }

    /// `v v^H`.
    pub fn outer(v: &[C64]) -> Self {
        let n = v.len();
        Self::hermitian_part(&ComplexMatrix::from_fn(n, n, |i, j| v[i] * v[j].conj()))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    pub fn add(&self, rhs: &Self) -> Self {
        Self(self.0.add(&rhs.0))
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        Self(self.0.sub(&rhs.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    /// `tr(A B)` for Hermitian `A`, `B`; real by construction.
    pub fn inner(&self, rhs: &Self) -> f64 {
        assert_eq!(self.dim(), rhs.dim());
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self.0[(i, j)] * rhs.0[(j, i)]).re;
            }
        }
        acc
    }

    /// `v^H A v`.
    pub fn quad_form(&self, v: &[C64]) -> f64 {
        let av = self.0.mul_vec(v);
        v.iter().zip(&av).map(|(a, b)| a.conj() * b).sum::<C64>().re
    }

    /// `B A B^H` for an arbitrary conforming `B`.
    pub fn congruence(&self, b: &ComplexMatrix) -> Self {
        Self::hermitian_part(&b.matmul(&self.0).matmul(&b.adjoint()))
    }

    /// Lower-triangular `L` with `A = L L^H`, or `None` if `A` is not
    /// numerically positive definite.
    pub fn cholesky(&self) -> Option<ComplexMatrix> {
        let n = self.dim();
        let mut l = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = self.0[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[(j, j)] = C64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = self.0[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / d;
            }
        }
        Some(l)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_some()
    }

    /// Natural log-determinant of a positive definite matrix.
    pub fn ln_det(&self) -> Result<f64> {
        let l = self.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok((0..self.dim()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
    }

    /// Inverse of a positive definite matrix.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.dim();
        let l = self.cholesky().ok_or(Error::NotPositiveDefinite)?;
        // Invert L by forward substitution, then A^{-1} = L^{-H} L^{-1}.
        let mut linv = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            linv[(j, j)] = C64::new(1.0, 0.0) / l[(j, j)];
            for i in j + 1..n {
                let mut s = C64::new(0.0, 0.0);
                for k in j..i {
                    s += l[(i, k)] * linv[(k, j)];
                }
                linv[(i, j)] = -s / l[(i, i)];
            }
        }
        Ok(Self::hermitian_part(&linv.adjoint().matmul(&linv)))
    }

    /// Eigendecomposition by cyclic complex Jacobi rotations.
    ///
    /// Eigenvalues are returned in descending order with matching unitary
    /// eigenvector columns.
    pub fn eig(&self) -> Result<HermitianEigen> {
        if !self.is_finite() {
            return Err(Error::NonFinite("hermitian_eig input"));
        }
        let n = self.dim();
        let mut a = self.0.clone();
        let mut u = ComplexMatrix::identity(n);
        let norm2 = a.frobenius_norm().powi(2);
        let threshold = 1e-30 * norm2;

        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[(p, q)].norm_sqr();
                }
            }
            if off <= threshold || off == 0.0 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    rotate(&mut a, &mut u, p, q);
                }
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(j, j)].re.total_cmp(&a[(i, i)].re));
        let values = order.iter().map(|&i| a[(i, i)].re).collect();
        let vectors = ComplexMatrix::from_fn(n, n, |r, c| u[(r, order[c])]);
        Ok(HermitianEigen { values, vectors })
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(*self.eig()?.values.last().unwrap_or(&0.0))
    }
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `u`.
fn rotate(a: &mut ComplexMatrix, u: &mut ComplexMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let phase = apq / r;
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau == 0.0 {
        1.0
    } else {
        tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let n = a.rows();

    // V = diag(1, e^{-i phi}) applied on (p, q) followed by a real rotation.
    let vqp = -phase.conj() * s;
    let vqq = phase.conj() * c;
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * c + akq * vqp;
        a[(k, q)] = akp * s + akq * vqq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = apk * c + aqk * vqp.conj();
        a[(q, k)] = apk * s + aqk * vqq.conj();
    }
    a[(p, q)] = C64::new(0.0, 0.0);
    a[(q, p)] = C64::new(0.0, 0.0);
    a[(p, p)].im = 0.0;
    a[(q, q)].im = 0.0;
    for k in 0..n {
        let ukp = u[(k, p)];
        let ukq = u[(k, q)];
        u[(k, p)] = ukp * c + ukq * vqp;
        u[(k, q)] = ukp * s + ukq * vqq;
    }
}

impl TryFrom<ComplexMatrix> for HermitianMatrix {
    type Error = Error;

    fn try_from(m: ComplexMatrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<HermitianMatrix> for ComplexMatrix {
    fn from(h: HermitianMatrix) -> Self {
        h.0
    }
}

impl Index<(usize, usize)> for HermitianMatrix {
    type Output = C64;

    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.0[idx]
    }
}

impl fmt::Debug for HermitianMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hermitian{:?}", self.0)
    }
}

/// Eigenpairs of a Hermitian matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Unitary matrix whose columns are the eigenvectors.
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    /// `U diag(f(lambda)) U^H`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> HermitianMatrix {
        let n = self.values.len();
        let u = &self.vectors;
        let mut out = ComplexMatrix::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let uik = u[(i, k)] * w;
                for j in 0..n {
                    out[(i, j)] += uik * u[(j, k)].conj();
                }
            }
        }
        HermitianMatrix::hermitian_part(&out)
    }

    pub fn reconstruct(&self) -> HermitianMatrix {
        self.map_values(|l| l)
    }
}

/// Eigendecomposition; free-function form of [`HermitianMatrix::eig`].
pub fn hermitian_eig(a: &HermitianMatrix) -> Result<HermitianEigen> {
    a.eig()
}

/// Returns `L` with `2 L^H L = G` for positive semidefinite `G`.
///
/// Uses the eigenvalue square root `L = diag(sqrt(lambda / 2)) U^H`, so
/// singular `G` yields zero rows instead of failing.
pub fn half_factor(g: &HermitianMatrix) -> Result<ComplexMatrix> {
    let eig = g.eig()?;
    let tol = PSD_TOLERANCE * g.frobenius_norm();
    let min = eig.values.last().copied().unwrap_or(0.0);
    if min < -tol {
        return Err(Error::Indefinite { min_eigenvalue: min });
    }
    let n = g.dim();
    let u = &eig.vectors;
    Ok(ComplexMatrix::from_fn(n, n, |i, j| {
        let lam = eig.values[i].max(0.0);
        u[(j, i)].conj() * (lam / 2.0).sqrt()
    }))
}

/// Nearest positive semidefinite matrix in Frobenius norm (eigenvalue clip).
pub fn psd_project(a: &HermitianMatrix) -> HermitianMatrix {
    match a.eig() {
        Ok(eig) => eig.map_values(|l| l.max(0.0)),
        Err(_) => HermitianMatrix::zeros(a.dim()),
    }
}

/// `W = U diag(sqrt(lambda))` so that `W W^H` reproduces the PSD input.
pub fn psd_sqrt_factor(a: &HermitianMatrix) -> Result<ComplexMatrix> {
    let eig = a.eig()?;
    let n = a.dim();
    Ok(ComplexMatrix::from_fn(n, n, |i, j| {
        eig.vectors[(i, j)] * eig.values[j].max(0.0).sqrt()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn herm(rows: &[Vec<C64>]) -> HermitianMatrix {
        HermitianMatrix::new(ComplexMatrix::from_rows(rows)).unwrap()
    }

    fn assert_close(a: &ComplexMatrix, b: &ComplexMatrix, tol: f64) {
        let d = a.sub(b).frobenius_norm();
        assert!(d <= tol, "difference {d:e} > {tol:e}\n{a:?}\n{b:?}");
    }

    #[test]
    fn diagonal_eigenpairs() {
        let a = HermitianMatrix::from_diag(&[1.0, 3.0]);
        let e = a.eig().unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert!((e.vectors[(1, 0)].norm() - 1.0).abs() < 1e-15);
        assert!((e.vectors[(0, 1)].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_eigenvalues() {
        let e = HermitianMatrix::identity(2).eig().unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
    }

    #[test]
    fn complex_two_by_two_matches_quadratic_formula() {
        let a = herm(&[vec![c(2.0, 0.0), c(1.0, -2.0)], vec![c(1.0, 2.0), c(-1.0, 0.0)]]);
        let e = a.eig().unwrap();
        let (p, q) = (2.0, -1.0);
        let off: f64 = 5.0;
        let mid = (p + q) / 2.0;
        let rad = (((p - q) / 2.0f64).powi(2) + off).sqrt();
        assert!((e.values[0] - (mid + rad)).abs() < 1e-12);
        assert!((e.values[1] - (mid - rad)).abs() < 1e-12);
        assert_close(e.reconstruct().as_matrix(), a.as_matrix(), 1e-12);
    }

    #[test]
    fn three_by_three_reconstruction() {
        let a = herm(&[
            vec![c(4.0, 0.0), c(1.0, 1.0), c(0.0, -0.5)],
            vec![c(1.0, -1.0), c(2.0, 0.0), c(0.3, 0.2)],
            vec![c(0.0, 0.5), c(0.3, -0.2), c(-1.0, 0.0)],
        ]);
        let e = a.eig().unwrap();
        assert_close(e.reconstruct().as_matrix(), a.as_matrix(), 1e-12);
        let uhu = e.vectors.adjoint().matmul(&e.vectors);
        assert_close(&uhu, &ComplexMatrix::identity(3), 1e-12);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut m = ComplexMatrix::identity(2);
        m[(0, 0)] = c(f64::NAN, 0.0);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let m = ComplexMatrix::from_rows(&[vec![c(1.0, 0.0), c(2.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]]);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn half_factor_of_scaled_identities() {
        let l = half_factor(&HermitianMatrix::identity(2)).unwrap();
        assert_close(&l.adjoint().matmul(&l).scale(2.0), &ComplexMatrix::identity(2), 1e-15);
        let l = half_factor(&HermitianMatrix::scaled_identity(2, 2.0)).unwrap();
        assert_close(&l.adjoint().matmul(&l), &ComplexMatrix::identity(2), 1e-15);
        for i in 0..2 {
            assert!((l.row(i).iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn half_factor_rank_deficient() {
        let v = [c(1.0, 0.0), c(0.0, 1.0)];
        let g = HermitianMatrix::outer(&v);
        let l = half_factor(&g).unwrap();
        assert_close(&l.adjoint().matmul(&l).scale(2.0), g.as_matrix(), 1e-14);
        assert!(l.row(1).iter().all(|z| z.norm() < 1e-7));
    }

    #[test]
    fn half_factor_rejects_indefinite() {
        let g = HermitianMatrix::from_diag(&[1.0, -0.5]);
        assert!(matches!(half_factor(&g), Err(Error::Indefinite { .. })));
    }

    #[test]
    fn psd_project_clips() {
        let p = psd_project(&HermitianMatrix::from_diag(&[1.0, -2.0]));
        assert_close(
            p.as_matrix(),
            HermitianMatrix::from_diag(&[1.0, 0.0]).as_matrix(),
            1e-15,
        );
        let psd = HermitianMatrix::from_diag(&[2.0, 0.5]);
        assert_close(psd_project(&psd).as_matrix(), psd.as_matrix(), 1e-15);
    }

    #[test]
    fn cholesky_inverse_and_logdet() {
        let a = herm(&[vec![c(4.0, 0.0), c(1.0, 1.0)], vec![c(1.0, -1.0), c(3.0, 0.0)]]);
        let inv = a.inverse().unwrap();
        assert_close(
            &a.as_matrix().matmul(inv.as_matrix()),
            &ComplexMatrix::identity(2),
            1e-14,
        );
        assert!((a.ln_det().unwrap() - (12.0f64 - 2.0).ln()).abs() < 1e-14);
        assert!(HermitianMatrix::from_diag(&[1.0, 0.0]).cholesky().is_none());
    }

    #[test]
    fn sqrt_factor_reproduces() {
        let q = HermitianMatrix::from_diag(&[4.0, 0.0]);
        let w = psd_sqrt_factor(&q).unwrap();
        assert_close(&w.matmul(&w.adjoint()), q.as_matrix(), 1e-14);
        assert!((w[(0, 0)].norm() - 2.0).abs() < 1e-14);
    }
}
