use std::fmt;
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::domain::DomainSpec;

/// `x ↦ f(x)` or `x ↦ h(x)` written into an output buffer.
pub type Map = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Closed-form `L_f^i h(x)` (identity injection). `None` when the order is not
/// provided, in which case callers fall back to differencing along the flow.
pub type LieProvider = Arc<dyn Fn(usize, &[f64]) -> Option<Vec<f64>> + Send + Sync>;

/// Analytic bound on the Lipschitz constant `L` relating `L_f^m h` to the
/// Lie bundle `H` over a domain, for a given `m`.
pub type TopLipschitzBound = Arc<dyn Fn(&DomainSpec, usize) -> Option<f64> + Send + Sync>;

/// The plant `ẋ = f(x)`, `y = h(x)`.
#[derive(Clone)]
pub struct SystemModel {
    pub label: String,
    state_dim: usize,
    output_dim: usize,
    drift: Map,
    output: Map,
    lie: Option<LieProvider>,
    top_lipschitz: Option<TopLipschitzBound>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("label", &self.label)
            .field("n", &self.state_dim)
            .field("p", &self.output_dim)
            .field("closed_form_lie", &self.lie.is_some())
            .finish()
    }
}

impl SystemModel {
    pub fn new<F, H>(label: impl Into<String>, n: usize, p: usize, drift: F, output: H) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        H: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            state_dim: n,
            output_dim: p,
            drift: Arc::new(drift),
            output: Arc::new(output),
            lie: None,
            top_lipschitz: None,
        }
    }

    pub fn with_lie<L>(mut self, lie: L) -> Self
    where
        L: Fn(usize, &[f64]) -> Option<Vec<f64>> + Send + Sync + 'static,
    {
        self.lie = Some(Arc::new(lie));
        self
    }

    pub fn with_top_lipschitz<L>(mut self, bound: L) -> Self
    where
        L: Fn(&DomainSpec, usize) -> Option<f64> + Send + Sync + 'static,
    {
        self.top_lipschitz = Some(Arc::new(bound));
        self
    }

    pub fn n(&self) -> usize {
        self.state_dim
    }

    pub fn p(&self) -> usize {
        self.output_dim
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn output(&self, x: &[f64], out: &mut [f64]) {
        (self.output)(x, out)
    }

    pub fn drift_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim];
        self.drift(x, &mut out);
        out
    }

    pub fn output_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim];
        self.output(x, &mut out);
        out
    }

    pub fn has_closed_form_lie(&self) -> bool {
        self.lie.is_some()
    }

    pub fn lie_derivative(&self, order: usize, x: &[f64]) -> Option<Vec<f64>> {
        self.lie.as_ref().and_then(|l| l(order, x))
    }

    pub fn top_lipschitz_bound(&self, domain: &DomainSpec, m: usize) -> Option<f64> {
        self.top_lipschitz.as_ref().and_then(|l| l(domain, m))
    }

    /// The time-rescaled model `f_γ = f / γ(h(x))` with the same output.
    /// Closed-form Lie derivatives are dropped since they refer to `f`.
    pub fn rescaled(&self, gamma: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>, gamma_label: &str) -> Self {
        let base = self.clone();
        let p = self.output_dim;
        let drift = move |x: &[f64], out: &mut [f64]| {
            base.drift(x, out);
            let mut y = vec![0.0; p];
            base.output(x, &mut y);
            let g = gamma(&y);
            out.iter_mut().for_each(|v| *v /= g);
        };
        let base = self.clone();
        let output = move |x: &[f64], out: &mut [f64]| base.output(x, out);
        SystemModel::new(format!("{}/rescaled[{}]", self.label, gamma_label), self.state_dim, p, drift, output)
    }

    /// Empirical local-Lipschitz and totality check over `cl(O + δ_u)`.
    ///
    /// The model hypotheses cannot be proven numerically, so failures are only
    /// logged.
    pub fn lipschitz_check(&self, domain: &DomainSpec, pairs: usize, seed: u64) -> LipschitzReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = LipschitzReport { pairs, drift_quotient: 0.0, output_quotient: 0.0, all_finite: true };
        let scale = domain.region.diameter() * 0.05;
        for _ in 0..pairs {
            let a = sample_collar(domain, &mut rng);
            let mut b: Vec<f64> = a.iter().map(|v| v + scale * (rng.random::<f64>() - 0.5)).collect();
            if domain.distance(&b) > domain.margins.cutoff {
                b = a.clone();
            }
            let dx = dist(&a, &b);
            if dx == 0.0 {
                continue;
            }
            let (fa, fb) = (self.drift_vec(&a), self.drift_vec(&b));
            let (ha, hb) = (self.output_vec(&a), self.output_vec(&b));
            if fa.iter().chain(&fb).chain(&ha).chain(&hb).any(|v| !v.is_finite()) {
                report.all_finite = false;
                continue;
            }
            report.drift_quotient = report.drift_quotient.max(dist(&fa, &fb) / dx);
            report.output_quotient = report.output_quotient.max(dist(&ha, &hb) / dx);
        }
        if !report.all_finite {
            warn!("model `{}` produced non-finite values inside the collar", self.label);
        }
        report
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub pairs: usize,
    pub drift_quotient: f64,
    pub output_quotient: f64,
    pub all_finite: bool,
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Uniform sample of `cl(O + δ_u)` by rejection from its bounding box.
pub fn sample_collar<R: Rng>(domain: &DomainSpec, rng: &mut R) -> Vec<f64> {
    let du = domain.margins.cutoff;
    let (lo, hi) = domain.bounding_box();
    loop {
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.random_range((l - du)..=(h + du))).collect();
        if domain.distance(&x) <= du {
            return x;
        }
    }
}

/// Uniform sample of `cl(O)`.
pub fn sample_region<R: Rng>(domain: &DomainSpec, rng: &mut R) -> Vec<f64> {
    let (lo, hi) = domain.bounding_box();
    loop {
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..=*h)).collect();
        if domain.contains(&x) {
            return x;
        }
    }
}
