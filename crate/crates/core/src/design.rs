//! Observer design data: the diagonal matrix `A`, the output injection `b`
//! (so that `B(y) = B_1m b(y)`), the decay bound `ℓ` and the gain `k`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{check_hurwitz, diag, ComplexMatrix};

/// Injective C¹ map `b: R^p → R^p` applied to the output.
#[derive(Clone)]
pub struct Injection {
    label: String,
    map: Option<Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
}

impl fmt::Debug for Injection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Injection({})", self.label)
    }
}

impl Default for Injection {
    fn default() -> Self {
        Self::identity()
    }
}

impl Injection {
    pub fn identity() -> Self {
        Self { label: "identity".into(), map: None }
    }

    /// Component-wise arctangent.
    pub fn atan() -> Self {
        Self::custom("atan", |y, out| {
            for (o, v) in out.iter_mut().zip(y) {
                *o = v.atan();
            }
        })
    }

    pub fn custom<F>(label: impl Into<String>, map: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { label: label.into(), map: Some(Arc::new(map)) }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "identity" => Ok(Self::identity()),
            "atan" => Ok(Self::atan()),
            other => Err(Error::Design(format!("unknown injection `{other}`"))),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_identity(&self) -> bool {
        self.map.is_none()
    }

    pub fn apply(&self, y: &[f64], out: &mut [f64]) {
        match &self.map {
            None => out.copy_from_slice(y),
            Some(f) => f(y, out),
        }
    }

    pub fn apply_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        self.apply(y, &mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub struct ObserverDesign {
    eigenvalues: Vec<Complex64>,
    pub injection: Injection,
    /// Decay bound `ℓ` with `Re λ_i < ℓ < 0`.
    pub ell: f64,
}

impl ObserverDesign {
    pub fn new(eigenvalues: Vec<Complex64>, injection: Injection, ell: f64) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Design("at least one eigenvalue is required".into()));
        }
        check_hurwitz(&eigenvalues)?;
        if !(ell < 0.0) {
            return Err(Error::Design(format!("decay bound must be negative, got {ell}")));
        }
        if let Some(l) = eigenvalues.iter().find(|l| !(l.re < ell)) {
            return Err(Error::Design(format!("eigenvalue {l} does not satisfy Re < {ell}")));
        }
        Ok(Self { eigenvalues, injection, ell })
    }

    /// Uses `ℓ = max Re λ_i / 2`.
    pub fn from_eigenvalues(eigenvalues: Vec<Complex64>, injection: Injection) -> Result<Self> {
        check_hurwitz(&eigenvalues)?;
        let ell = 0.5 * max_re(&eigenvalues);
        Self::new(eigenvalues, injection, ell)
    }

    pub fn real(eigenvalues: &[f64]) -> Result<Self> {
        Self::from_eigenvalues(eigenvalues.iter().map(|&r| Complex64::new(r, 0.0)).collect(), Injection::identity())
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    pub fn m(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn a_matrix(&self) -> ComplexMatrix {
        diag(&self.eigenvalues)
    }

    pub fn max_re(&self) -> f64 {
        max_re(&self.eigenvalues)
    }

    /// `k·λ_i`, the spectrum of `kA`.
    pub fn scaled_eigenvalues(&self, k: f64) -> Vec<Complex64> {
        self.eigenvalues.iter().map(|l| l * k).collect()
    }

    /// `B(y) = B_1m b(y)`: every row equals `b(y)`.
    pub fn injection_matrix(&self, y: &[f64]) -> ComplexMatrix {
        let b = self.injection.apply_vec(y);
        ComplexMatrix::from_fn(self.m(), b.len(), |_, j| Complex64::new(b[j], 0.0))
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.eigenvalues.len() as u64).to_le_bytes());
        for l in &self.eigenvalues {
            out.extend_from_slice(&l.re.to_le_bytes());
            out.extend_from_slice(&l.im.to_le_bytes());
        }
        out.extend_from_slice(self.injection.label.as_bytes());
        out.push(0);
        out
    }
}

pub fn max_re(eigenvalues: &[Complex64]) -> f64 {
    eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// `|B_1m| = √m`.
pub fn ones_norm(m: usize) -> f64 {
    (m as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_validation() {
        assert!(ObserverDesign::real(&[-1.0, -2.0]).is_ok());
        assert!(matches!(ObserverDesign::real(&[-1.0, 0.5]), Err(Error::NotHurwitz(_))));
        let l = vec![Complex64::new(-1.0, 0.0)];
        assert!(ObserverDesign::new(l.clone(), Injection::identity(), -2.0).is_err());
        assert!(ObserverDesign::new(l, Injection::identity(), -0.5).is_ok());
    }

    #[test]
    fn injection_matrix_rows() {
        let d = ObserverDesign::real(&[-1.0, -2.0, -3.0]).unwrap();
        let b = d.injection_matrix(&[0.7]);
        assert_eq!(b.shape(), (3, 1));
        assert!(b.iter().all(|v| *v == Complex64::new(0.7, 0.0)));
        assert!((Injection::atan().apply_vec(&[1.0])[0] - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }
}
