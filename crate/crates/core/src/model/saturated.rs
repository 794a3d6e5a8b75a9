use super::domain::DomainSpec;
use super::system::SystemModel;

/// Smooth cutoff `χ`: one on `O + δ_d`, zero outside `O + δ_u`, and the C¹
/// smoothstep `3t² − 2t³` of `t = (δ_u − d(x,O)) / (δ_u − δ_d)` in between.
pub fn cutoff(x: &[f64], domain: &DomainSpec) -> f64 {
    ramp(domain.distance(x), domain)
}

pub(crate) fn ramp(d: f64, domain: &DomainSpec) -> f64 {
    let (dd, du) = (domain.margins.distinguish, domain.margins.cutoff);
    if d <= dd {
        1.0
    } else if d >= du {
        0.0
    } else {
        let t = (du - d) / (du - dd);
        t * t * (3.0 - 2.0 * t)
    }
}

/// The modified plant `ẋ = χ(x) f(x)`. Its flows freeze outside the collar,
/// so every backward solution stays bounded.
#[derive(Debug, Clone)]
pub struct SaturatedSystem {
    pub base: SystemModel,
    pub domain: DomainSpec,
}

impl SaturatedSystem {
    pub fn new(base: SystemModel, domain: DomainSpec) -> crate::Result<Self> {
        if base.n() != domain.dim() {
            return Err(crate::Error::Dimension { expected: base.n(), got: domain.dim() });
        }
        Ok(Self { base, domain })
    }

    pub fn field(&self, x: &[f64], out: &mut [f64]) {
        let chi = cutoff(x, &self.domain);
        if chi == 0.0 {
            out.fill(0.0);
            return;
        }
        self.base.drift(x, out);
        if chi != 1.0 {
            out.iter_mut().for_each(|v| *v *= chi);
        }
    }

    pub fn field_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.base.n()];
        self.field(x, &mut out);
        out
    }
}
