//! Dense complex linear algebra for diagonal observer designs.
//!
//! The observer matrix `A` is always diagonal here, so the Lyapunov solution
//! and the matrix exponential are available entry-wise. The gain matrices
//! `S` and `K` are small dense matrices handled through nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;

/// Builds `diag(λ_1, …, λ_m)`.
pub fn diag(values: &[Complex64]) -> ComplexMatrix {
    let m = values.len();
    let mut out = ComplexMatrix::zeros(m, m);
    for (i, v) in values.iter().enumerate() {
        out[(i, i)] = *v;
    }
    out
}

/// Diagonal of a matrix, failing if any off-diagonal entry is nonzero.
pub fn diagonal_entries(a: &ComplexMatrix) -> Result<Vec<Complex64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension { expected: a.nrows(), got: a.ncols() });
    }
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j && a[(i, j)] != Complex64::new(0.0, 0.0) {
                return Err(Error::NotDiagonal);
            }
        }
    }
    Ok((0..a.nrows()).map(|i| a[(i, i)]).collect())
}

/// Fails with the first eigenvalue whose real part is not strictly negative.
pub fn check_hurwitz(eigenvalues: &[Complex64]) -> Result<()> {
    match eigenvalues.iter().find(|l| !(l.re < 0.0) || !l.im.is_finite()) {
        Some(l) => Err(Error::NotHurwitz(*l)),
        None => Ok(()),
    }
}

/// Frobenius norm, the norm used for every `m × p` observer quantity.
pub fn frobenius(a: &ComplexMatrix) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn spectral_norm(a: &ComplexMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn is_hermitian(a: &ComplexMatrix, tol: f64) -> bool {
    a.nrows() == a.ncols()
        && (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| (a[(i, j)] - a[(j, i)].conj()).norm() <= tol))
}

/// Writes `z` into `out` row-major with interleaved re/im parts.
pub fn pack(z: &ComplexMatrix, out: &mut [f64]) {
    let p = z.ncols();
    for i in 0..z.nrows() {
        for j in 0..p {
            let v = z[(i, j)];
            out[2 * (i * p + j)] = v.re;
            out[2 * (i * p + j) + 1] = v.im;
        }
    }
}

/// Inverse of [`pack`].
pub fn unpack(data: &[f64], m: usize, p: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(m, p, |i, j| Complex64::new(data[2 * (i * p + j)], data[2 * (i * p + j) + 1]))
}

/// Solution of `Āᵀ P + P A = −I` for diagonal Hurwitz `A`.
#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub p: ComplexMatrix,
    pub lambda_max: f64,
    pub lambda_min: f64,
}

impl LyapunovSolution {
    /// `Σ_i ē_iᵀ P e_i` over the columns of `e`.
    pub fn quadratic_form(&self, e: &ComplexMatrix) -> f64 {
        let pe = &self.p * e;
        let mut acc = 0.0;
        for c in 0..e.ncols() {
            for r in 0..e.nrows() {
                acc += (e[(r, c)].conj() * pe[(r, c)]).re;
            }
        }
        acc
    }

    /// Max-norm residual of the Lyapunov equation for `a`.
    pub fn residual(&self, a: &ComplexMatrix) -> f64 {
        let lhs = a.adjoint() * &self.p + &self.p * a + ComplexMatrix::identity(a.nrows(), a.ncols());
        lhs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

pub fn solve_lyapunov(a: &ComplexMatrix) -> Result<LyapunovSolution> {
    let eig = diagonal_entries(a)?;
    solve_lyapunov_diag(&eig)
}

/// Entry-wise solution `P_ij = −δ_ij / (λ̄_i + λ_j)`, so `P_ii = −1/(2 Re λ_i)`.
pub fn solve_lyapunov_diag(eigenvalues: &[Complex64]) -> Result<LyapunovSolution> {
    check_hurwitz(eigenvalues)?;
    let m = eigenvalues.len();
    let mut p = ComplexMatrix::zeros(m, m);
    let mut lambda_max = f64::NEG_INFINITY;
    let mut lambda_min = f64::INFINITY;
    for (i, l) in eigenvalues.iter().enumerate() {
        let v = -1.0 / (2.0 * l.re);
        p[(i, i)] = Complex64::new(v, 0.0);
        lambda_max = lambda_max.max(v);
        lambda_min = lambda_min.min(v);
    }
    Ok(LyapunovSolution { p, lambda_max, lambda_min })
}

/// The matrices `S_ij = λ_i^{−j}` and `K = diag(k, …, k^m)`.
#[derive(Debug, Clone)]
pub struct GainMatrices {
    pub s: ComplexMatrix,
    pub s_inv: ComplexMatrix,
    pub k: ComplexMatrix,
    pub s_inv_norm: f64,
    pub s_norm: f64,
    /// 2-norm condition number of `S`.
    pub condition: f64,
}

pub fn gain_matrices(eigenvalues: &[Complex64], k: f64) -> Result<GainMatrices> {
    if !(k > 0.0) {
        return Err(Error::Design(format!("gain k must be positive, got {k}")));
    }
    let m = eigenvalues.len();
    for (i, a) in eigenvalues.iter().enumerate() {
        if a.norm() == 0.0 {
            return Err(Error::ZeroEigenvalue);
        }
        for b in &eigenvalues[i + 1..] {
            if (a - b).norm() == 0.0 {
                return Err(Error::RepeatedEigenvalues(*a, *b));
            }
        }
    }
    let s = ComplexMatrix::from_fn(m, m, |i, j| eigenvalues[i].powi(-(j as i32 + 1)));
    let k_mat = ComplexMatrix::from_fn(m, m, |i, j| {
        if i == j {
            Complex64::new(k.powi(i as i32 + 1), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or(Error::RepeatedEigenvalues(eigenvalues[0], eigenvalues[m - 1]))?;
    let s_norm = spectral_norm(&s);
    let s_inv_norm = spectral_norm(&s_inv);
    Ok(GainMatrices { s, s_inv, k: k_mat, s_inv_norm, s_norm, condition: s_norm * s_inv_norm })
}
