//! The transform `T(x) = ∫_{−∞}^0 exp(−As) B_1m b(h(X̆(x,s))) ds` evaluated
//! numerically, its tabulation over a grid, and the residual of
//! `L_f T = A T + B(h)`.

mod table;

use std::ops::ControlFlow;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::design::{ones_norm, ObserverDesign};
use crate::error::{Error, Result};
use crate::model::{DomainSpec, SaturatedSystem, SystemModel};
use crate::numerics::{integrate_to, integrate_with, unpack, ComplexMatrix, OdeOptions};

pub use table::{tabulate, Grid, TableInfo, TransformTable, TABLE_MAGIC, TABLE_VERSION};

/// Default nodes per axis for tabulation.
pub const DEFAULT_NODES_PER_AXIS: usize = 21;

/// Anything that maps states to `m × p` complex matrices and can seed a
/// nearest-point inversion from a table.
pub trait Transform: Sync {
    fn state_dim(&self) -> usize;
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn domain(&self) -> &DomainSpec;
    fn eval(&self, x: &[f64]) -> Result<ComplexMatrix>;
    fn info(&self) -> TableInfo;

    fn fingerprint(&self) -> u64 {
        self.info().fingerprint
    }
}

/// 64-bit digest (first eight bytes of SHA-256, little endian).
pub fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

/// Evaluates `T(x)` by co-integrating, backward in time from `s = 0` to
/// `s = −horizon`, the saturated flow `X̆(x,s)` together with the accumulated
/// filter integral `ζ(s) = ∫_s^0 exp(−Aσ) B(h(X̆(x,σ))) dσ`. The result is
/// `ζ(−horizon)`, the truncated integral.
pub fn eval_t(
    sys: &SaturatedSystem,
    design: &ObserverDesign,
    x: &[f64],
    horizon: f64,
    tol: f64,
) -> Result<ComplexMatrix> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Horizon(horizon));
    }
    let n = sys.base.n();
    let p = sys.base.p();
    let m = design.m();
    if x.len() != n {
        return Err(Error::Dimension { expected: n, got: x.len() });
    }
    let lambdas: Vec<Complex64> = design.eigenvalues().to_vec();
    let mut y = vec![0.0; p];
    let mut b = vec![0.0; p];
    let field = move |s: f64, state: &[f64], d: &mut [f64]| {
        let (xs, _) = state.split_at(n);
        let (dx, dz) = d.split_at_mut(n);
        sys.field(xs, dx);
        sys.base.output(xs, &mut y);
        design.injection.apply(&y, &mut b);
        for (i, l) in lambdas.iter().enumerate() {
            let w = -(-l * s).exp();
            for j in 0..p {
                let v = w * b[j];
                dz[2 * (i * p + j)] = v.re;
                dz[2 * (i * p + j) + 1] = v.im;
            }
        }
    };
    let mut init = vec![0.0; n + 2 * m * p];
    init[..n].copy_from_slice(x);
    let end = integrate_to(field, &init, 0.0, -horizon, &OdeOptions::with_tol(tol))?;
    Ok(unpack(&end[n..], m, p))
}

/// `sup |B(h(x))|` over `cl(O + δ_u)`, sampled on a tensor grid. Stands in for
/// the tail constant of the exponential bound, which is not computable.
pub fn amplitude_bound(sys: &SaturatedSystem, design: &ObserverDesign, nodes_per_axis: usize) -> f64 {
    let domain = &sys.domain;
    let du = domain.margins.cutoff;
    let (lo, hi) = domain.bounding_box();
    let lower: Vec<f64> = lo.iter().map(|v| v - du).collect();
    let upper: Vec<f64> = hi.iter().map(|v| v + du).collect();
    let grid = Grid::new(lower, upper, vec![nodes_per_axis.max(2); domain.dim()]);
    let p = sys.base.p();
    let mut y = vec![0.0; p];
    let mut b = vec![0.0; p];
    let mut sup = 0.0f64;
    for idx in 0..grid.num_nodes() {
        let x = grid.node(idx);
        if domain.distance(&x) > du {
            continue;
        }
        sys.base.output(&x, &mut y);
        design.injection.apply(&y, &mut b);
        sup = sup.max(b.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    ones_norm(design.m()) * sup
}

/// Horizon making the geometric tail `C·exp(−r T_h)/r` equal `tol`, where
/// `r = −max_i Re λ_i`. Clamped below at one time constant `1/r`.
pub fn select_horizon(design: &ObserverDesign, amplitude: f64, tol: f64) -> f64 {
    let r = -design.max_re();
    let th = (amplitude / (tol * r)).ln() / r;
    if th.is_finite() {
        th.max(1.0 / r)
    } else {
        1.0 / r
    }
}

/// The exact transform of a saturated system with a fixed horizon.
#[derive(Debug, Clone)]
pub struct ExactTransform {
    pub sys: SaturatedSystem,
    pub design: ObserverDesign,
    pub horizon: f64,
    pub tol: f64,
}

impl ExactTransform {
    pub fn new(sys: SaturatedSystem, design: ObserverDesign, horizon: f64, tol: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Horizon(horizon));
        }
        Ok(Self { sys, design, horizon, tol })
    }

    /// Horizon from the sampled amplitude bound with tail tolerance `tail_tol`.
    pub fn with_auto_horizon(sys: SaturatedSystem, design: ObserverDesign, tail_tol: f64, tol: f64) -> Result<Self> {
        let c = amplitude_bound(&sys, &design, 41);
        let horizon = select_horizon(&design, c, tail_tol);
        Self::new(sys, design, horizon, tol)
    }
}

impl Transform for ExactTransform {
    fn state_dim(&self) -> usize {
        self.sys.base.n()
    }

    fn rows(&self) -> usize {
        self.design.m()
    }

    fn cols(&self) -> usize {
        self.sys.base.p()
    }

    fn domain(&self) -> &DomainSpec {
        &self.sys.domain
    }

    fn eval(&self, x: &[f64]) -> Result<ComplexMatrix> {
        eval_t(&self.sys, &self.design, x, self.horizon, self.tol)
    }

    fn info(&self) -> TableInfo {
        let mut bytes = b"exact\0".to_vec();
        bytes.extend_from_slice(self.sys.base.label.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&self.sys.domain.canonical_bytes());
        bytes.extend_from_slice(&self.design.canonical_bytes());
        bytes.extend_from_slice(&self.horizon.to_le_bytes());
        bytes.extend_from_slice(&self.tol.to_le_bytes());
        TableInfo {
            fingerprint: hash64(&bytes),
            model_label: self.sys.base.label.clone(),
            transform_label: format!("exact/{}", self.design.injection.label()),
            eigenvalues: self.design.eigenvalues().to_vec(),
            horizon: self.horizon,
            quad_tol: self.tol,
        }
    }
}

/// `[T(X(x,dt)) − T(x)]/dt − [A T(x) + B(h(x))]` along the unsaturated flow.
/// Fails if the flow leaves `cl(O)` within `dt`.
pub fn pde_residual<T>(
    model: &SystemModel,
    domain: &DomainSpec,
    design: &ObserverDesign,
    t_eval: T,
    x: &[f64],
    dt: f64,
) -> Result<ComplexMatrix>
where
    T: Fn(&[f64]) -> Result<ComplexMatrix>,
{
    let x_dt = flow_within(model, domain, x, dt)?;
    let t0 = t_eval(x)?;
    let t1 = t_eval(&x_dt)?;
    let rhs = design.a_matrix() * &t0 + design.injection_matrix(&model.output_vec(x));
    Ok((t1 - &t0).unscale(dt) - rhs)
}

/// `X(x, t)` for the unsaturated plant, failing if it leaves `cl(O)`.
pub fn flow_within(model: &SystemModel, domain: &DomainSpec, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let opts = OdeOptions::with_tol(1e-13);
    let mut out = x.to_vec();
    let mut exit = None;
    let escape = integrate_with(
        |_, s, d| model.drift(s, d),
        x,
        0.0,
        t,
        &opts,
        |step, y| {
            if !domain.contains(y) {
                exit = Some(step.t1());
                return ControlFlow::Break(());
            }
            out.copy_from_slice(y);
            ControlFlow::Continue(())
        },
    );
    if let Some(time) = exit {
        return Err(Error::FlowExit { time });
    }
    if let Some(e) = escape {
        return Err(Error::Integration { time: e.time, state: e.state, reason: format!("{:?}", e.reason) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
