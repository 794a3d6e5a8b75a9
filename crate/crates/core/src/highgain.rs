//! High-gain approximate transform
//! `T_a(x) = −Σ_{i=1}^m (kA)^{−i} B_1m L_f^{i−1} b(h(x)) = −S K⁻¹ H(x)`,
//! its defect `𝔈 = −(kA)^{−m} B_1m L_f^m b(h)`, and the small-gain
//! certificate that selects `k`.

use std::ops::ControlFlow;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::design::{ones_norm, ObserverDesign};
use crate::error::{Error, Result};
use crate::injectivity::MAX_PAIRS;
use crate::model::{DomainSpec, SystemModel};
use crate::numerics::{frobenius, gain_matrices, integrate_with, solve_lyapunov_diag, ComplexMatrix, OdeOptions};
use crate::transform::{hash64, Grid, TableInfo, Transform};

/// Default finite-difference stencil width (scaled by `1 + |x|`).
pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Default gain ladder `1, 2, 4, …, 2¹⁵`.
pub fn default_k_ladder() -> Vec<f64> {
    (0..16).map(|i| (1u64 << i) as f64).collect()
}

/// `H(x)` with rows `b(h), L_f b(h), …, L_f^{m−1} b(h)`, and `L_f^m b(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LieBundle {
    pub h: DMatrix<f64>,
    pub top: Vec<f64>,
}

/// `X(x, t)` of the unsaturated plant, failing if it leaves `cl(O + δ_u)`.
fn flow_in_collar(model: &SystemModel, domain: &DomainSpec, x: &[f64], t: f64) -> Result<Vec<f64>> {
    if t == 0.0 {
        return Ok(x.to_vec());
    }
    let du = domain.margins.cutoff;
    let mut out = x.to_vec();
    let mut exit = None;
    let escape = integrate_with(
        |_, s, d| model.drift(s, d),
        x,
        0.0,
        t,
        &OdeOptions::with_tol(1e-13),
        |step, y| {
            if domain.distance(y) > du {
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

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Order-`i` central difference of `g` at 0 with nodes `(i/2 − j)s`.
fn central_difference<G>(g: &mut G, order: usize, s: f64) -> Result<Vec<f64>>
where
    G: FnMut(f64) -> Result<Vec<f64>>,
{
    let mut acc: Option<Vec<f64>> = None;
    for j in 0..=order {
        let w = if j % 2 == 0 { 1.0 } else { -1.0 } * binomial(order, j);
        let v = g((order as f64 / 2.0 - j as f64) * s)?;
        let a = acc.get_or_insert_with(|| vec![0.0; v.len()]);
        for (a, v) in a.iter_mut().zip(&v) {
            *a += w * v;
        }
    }
    let scale = s.powi(order as i32);
    Ok(acc.unwrap_or_default().into_iter().map(|v| v / scale).collect())
}

/// `L_f^order b(h)(x)` by time differencing of `t ↦ b(h(X(x,t)))` with one
/// Richardson step. The stencil widens with the order to balance truncation
/// against round-off.
pub fn lie_derivative_fd(
    model: &SystemModel,
    domain: &DomainSpec,
    injection: &crate::design::Injection,
    order: usize,
    x: &[f64],
    fd_step: f64,
) -> Result<Vec<f64>> {
    let mut g = |t: f64| -> Result<Vec<f64>> {
        let xt = flow_in_collar(model, domain, x, t)?;
        Ok(injection.apply_vec(&model.output_vec(&xt)))
    };
    if order == 0 {
        return g(0.0);
    }
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s = fd_step * (1.0 + xn) * (1u64 << (order - 1)) as f64;
    let coarse = central_difference(&mut g, order, s)?;
    let fine = central_difference(&mut g, order, s / 2.0)?;
    Ok(fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect())
}

/// Lie-derivative bundle of order `m`, from the model's closed forms when
/// they exist (identity injection only) and by finite differences otherwise.
pub fn lie_bundle(
    model: &SystemModel,
    domain: &DomainSpec,
    injection: &crate::design::Injection,
    m: usize,
    x: &[f64],
    fd_step: f64,
) -> Result<LieBundle> {
    if m == 0 {
        return Err(Error::Design("lie bundle needs m ≥ 1".into()));
    }
    let p = model.p();
    let mut rows = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let closed = if injection.is_identity() { model.lie_derivative(i, x) } else { None };
        let row = match closed {
            Some(v) => v,
            None => lie_derivative_fd(model, domain, injection, i, x, fd_step)?,
        };
        if row.len() != p {
            return Err(Error::Dimension { expected: p, got: row.len() });
        }
        rows.push(row);
    }
    let top = rows.pop().expect("m + 1 rows");
    let h = DMatrix::from_fn(m, p, |i, j| rows[i][j]);
    Ok(LieBundle { h, top })
}

fn complexify(a: &DMatrix<f64>) -> ComplexMatrix {
    a.map(|v| Complex64::new(v, 0.0))
}

/// `T_a = −S K⁻¹ H` with `S_ij = λ_i^{−j}`, `K = diag(k, …, k^m)`.
pub fn build_ta(design: &ObserverDesign, k: f64, bundle: &LieBundle) -> Result<ComplexMatrix> {
    let g = gain_matrices(design.eigenvalues(), k)?;
    let k_inv = ComplexMatrix::from_fn(design.m(), design.m(), |i, j| if i == j { g.k[(i, i)].inv() } else { Complex64::new(0.0, 0.0) });
    let ta = -(g.s * k_inv) * complexify(&bundle.h);
    debug_assert!(frobenius(&(&ta - build_ta_series(design, k, bundle))) <= 1e-12 * (1.0 + frobenius(&ta)));
    Ok(ta)
}

/// The same matrix as [`build_ta`] from the series
/// `−Σ_i (kA)^{−i} B_1m L_f^{i−1} b(h)`.
pub fn build_ta_series(design: &ObserverDesign, k: f64, bundle: &LieBundle) -> ComplexMatrix {
    let m = design.m();
    let p = bundle.h.ncols();
    let mut out = ComplexMatrix::zeros(m, p);
    for (r, l) in design.eigenvalues().iter().enumerate() {
        let kl = l * k;
        for i in 1..=m {
            let w = kl.powi(-(i as i32));
            for j in 0..p {
                out[(r, j)] -= w * bundle.h[(i - 1, j)];
            }
        }
    }
    out
}

/// `𝔈 = −(kA)^{−m} B_1m L_f^m b(h)`.
pub fn approx_error(design: &ObserverDesign, k: f64, bundle: &LieBundle) -> ComplexMatrix {
    let m = design.m();
    ComplexMatrix::from_fn(m, bundle.top.len(), |r, j| -(design.eigenvalues()[r] * k).powi(-(m as i32)) * bundle.top[j])
}

/// The approximate transform at a fixed gain.
#[derive(Debug, Clone)]
pub struct HighGainTransform {
    pub model: SystemModel,
    pub domain: DomainSpec,
    pub design: ObserverDesign,
    pub k: f64,
    pub fd_step: f64,
}

impl HighGainTransform {
    pub fn new(model: SystemModel, domain: DomainSpec, design: ObserverDesign, k: f64) -> Result<Self> {
        if !(k >= 1.0) || !k.is_finite() {
            return Err(Error::Design(format!("gain must satisfy k ≥ 1, got {k}")));
        }
        if domain.dim() != model.n() {
            return Err(Error::Dimension { expected: model.n(), got: domain.dim() });
        }
        gain_matrices(design.eigenvalues(), k)?;
        Ok(Self { model, domain, design, k, fd_step: DEFAULT_FD_STEP })
    }

    pub fn bundle(&self, x: &[f64]) -> Result<LieBundle> {
        lie_bundle(&self.model, &self.domain, &self.design.injection, self.design.m(), x, self.fd_step)
    }

    /// `𝔈(x)` at this gain.
    pub fn error(&self, x: &[f64]) -> Result<ComplexMatrix> {
        Ok(approx_error(&self.design, self.k, &self.bundle(x)?))
    }

    /// Spectrum of `kA`.
    pub fn observer_eigenvalues(&self) -> Vec<Complex64> {
        self.design.scaled_eigenvalues(self.k)
    }

    pub fn observer_matrix(&self) -> ComplexMatrix {
        crate::numerics::diag(&self.observer_eigenvalues())
    }
}

impl Transform for HighGainTransform {
    fn state_dim(&self) -> usize {
        self.model.n()
    }

    fn rows(&self) -> usize {
        self.design.m()
    }

    fn cols(&self) -> usize {
        self.model.p()
    }

    fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    fn eval(&self, x: &[f64]) -> Result<ComplexMatrix> {
        build_ta(&self.design, self.k, &self.bundle(x)?)
    }

    fn info(&self) -> TableInfo {
        let mut bytes = b"highgain\0".to_vec();
        bytes.extend_from_slice(self.model.label.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&self.domain.canonical_bytes());
        bytes.extend_from_slice(&self.design.canonical_bytes());
        bytes.extend_from_slice(&self.k.to_le_bytes());
        bytes.extend_from_slice(&self.fd_step.to_le_bytes());
        TableInfo {
            fingerprint: hash64(&bytes),
            model_label: self.model.label.clone(),
            transform_label: format!("highgain/k={}/{}", self.k, self.design.injection.label()),
            eigenvalues: self.design.eigenvalues().to_vec(),
            horizon: 0.0,
            quad_tol: self.fd_step,
        }
    }
}

/// Central-difference defect `L_f T_a − kA T_a − B(h)` along the plant flow,
/// the definition that [`approx_error`] evaluates in closed form.
pub fn approx_error_fd(ta: &HighGainTransform, x: &[f64], dt: f64) -> Result<ComplexMatrix> {
    let xp = flow_in_collar(&ta.model, &ta.domain, x, dt)?;
    let xm = flow_in_collar(&ta.model, &ta.domain, x, -dt)?;
    let lf = (ta.eval(&xp)? - ta.eval(&xm)?).unscale(2.0 * dt);
    let t0 = ta.eval(x)?;
    Ok(lf - ta.observer_matrix() * t0 - ta.design.injection_matrix(&ta.model.output_vec(x)))
}

/// k-independent constants of the certificate.
#[derive(Debug, Clone, Serialize)]
pub struct GainConstants {
    /// Largest `|ΔL_f^m b(h)| / |ΔH|` over sampled node pairs.
    pub l_empirical: f64,
    /// Model-supplied bound, when available.
    pub l_analytic: Option<f64>,
    /// Constant used: the analytic bound if present (never below the
    /// empirical value), otherwise the empirical one.
    pub l: f64,
    pub s_inv_norm: f64,
    /// `N = |B_1m|·L·|S⁻¹| / min_i |λ_i|^m`.
    pub n: f64,
    /// `−max_i Re λ_i`.
    pub decay: f64,
    pub pairs: usize,
}

impl GainConstants {
    /// Smallest gain with `N / (k·(−max Re λ)) < 1` holding with equality.
    pub fn k_required(&self) -> f64 {
        self.n / self.decay
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GainCert {
    pub model: String,
    pub eigenvalues: Vec<[f64; 2]>,
    pub m: usize,
    pub injection: String,
    pub constants: GainConstants,
    pub l: f64,
    pub n: f64,
    /// `max |Δ𝔈| / |ΔT_a|` over node pairs at the selected gain.
    pub n_empirical: f64,
    pub k: f64,
    pub k_required: f64,
    /// Diagonal of `P` solving `(kA)* P + P (kA) = −I`.
    pub p_diag: Vec<f64>,
    pub lambda_max: f64,
    pub lambda_min: f64,
    /// `2N λ_max(P)`.
    pub small_gain: f64,
    /// Decay rate of `U` when satisfied, `(1 − 2Nλ_max)/λ_max`.
    pub epsilon: Option<f64>,
    pub satisfied: bool,
}

impl GainCert {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn pairs_for(count: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = count * count.saturating_sub(1) / 2;
    if total <= MAX_PAIRS {
        return (0..count).flat_map(|i| (i + 1..count).map(move |j| (i, j))).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..MAX_PAIRS)
        .map(|_| loop {
            let (i, j) = (rng.random_range(0..count), rng.random_range(0..count));
            if i != j {
                break (i.min(j), i.max(j));
            }
        })
        .collect()
}

fn real_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

struct NodeData {
    h: Vec<f64>,
    top: Vec<f64>,
}

fn node_data(model: &SystemModel, domain: &DomainSpec, design: &ObserverDesign, grid: &Grid, fd_step: f64) -> Result<Vec<NodeData>> {
    let nodes: Vec<Vec<f64>> = (0..grid.num_nodes()).map(|i| grid.node(i)).filter(|x| domain.contains(x)).collect();
    nodes
        .into_par_iter()
        .map(|x| {
            let b = lie_bundle(model, domain, &design.injection, design.m(), &x, fd_step)?;
            Ok(NodeData { h: b.h.iter().copied().collect(), top: b.top })
        })
        .collect()
}

/// Estimates `L` over grid-node pairs and evaluates `N`.
pub fn gain_constants(
    model: &SystemModel,
    domain: &DomainSpec,
    design: &ObserverDesign,
    grid: &Grid,
    seed: u64,
) -> Result<GainConstants> {
    let data = node_data(model, domain, design, grid, DEFAULT_FD_STEP)?;
    let pairs = pairs_for(data.len(), seed);
    let l_empirical = pairs
        .par_iter()
        .map(|&(a, b)| {
            let dh = real_dist(&data[a].h, &data[b].h);
            if dh == 0.0 {
                0.0
            } else {
                real_dist(&data[a].top, &data[b].top) / dh
            }
        })
        .reduce(|| 0.0, f64::max);
    let m = design.m();
    let l_analytic = model.top_lipschitz_bound(domain, m);
    let l = match l_analytic {
        Some(a) => a.max(l_empirical),
        None => l_empirical,
    };
    let g = gain_matrices(design.eigenvalues(), 1.0)?;
    let min_mod = design.eigenvalues().iter().map(|l| l.norm().powi(m as i32)).fold(f64::INFINITY, f64::min);
    let n = ones_norm(m) * l * g.s_inv_norm / min_mod;
    Ok(GainConstants { l_empirical, l_analytic, l, s_inv_norm: g.s_inv_norm, n, decay: -design.max_re(), pairs: pairs.len() })
}

/// Certificate data at a given gain.
pub fn cert_at(
    model: &SystemModel,
    domain: &DomainSpec,
    design: &ObserverDesign,
    grid: &Grid,
    constants: GainConstants,
    k: f64,
    seed: u64,
) -> Result<GainCert> {
    let ta = HighGainTransform::new(model.clone(), domain.clone(), design.clone(), k)?;
    let data = node_data(model, domain, design, grid, ta.fd_step)?;
    let evals: Vec<(Vec<Complex64>, Vec<Complex64>)> = data
        .par_iter()
        .map(|d| {
            let b = LieBundle { h: DMatrix::from_iterator(design.m(), model.p(), d.h.iter().copied()), top: d.top.clone() };
            let t = build_ta(design, k, &b)?;
            Ok((t.iter().copied().collect(), approx_error(design, k, &b).iter().copied().collect()))
        })
        .collect::<Result<_>>()?;
    let cdist = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let n_empirical = pairs_for(evals.len(), seed)
        .par_iter()
        .map(|&(a, b)| {
            let dt = cdist(&evals[a].0, &evals[b].0);
            if dt == 0.0 {
                0.0
            } else {
                cdist(&evals[a].1, &evals[b].1) / dt
            }
        })
        .reduce(|| 0.0, f64::max);
    let lyap = solve_lyapunov_diag(&ta.observer_eigenvalues())?;
    let small_gain = 2.0 * constants.n * lyap.lambda_max;
    let satisfied = small_gain < 1.0;
    Ok(GainCert {
        model: model.label.clone(),
        eigenvalues: design.eigenvalues().iter().map(|l| [l.re, l.im]).collect(),
        m: design.m(),
        injection: design.injection.label().to_string(),
        l: constants.l,
        n: constants.n,
        k_required: constants.k_required(),
        constants,
        n_empirical,
        k,
        p_diag: (0..design.m()).map(|i| lyap.p[(i, i)].re).collect(),
        lambda_max: lyap.lambda_max,
        lambda_min: lyap.lambda_min,
        small_gain,
        epsilon: satisfied.then(|| (1.0 - small_gain) / lyap.lambda_max),
        satisfied,
    })
}

/// Selects the smallest candidate gain satisfying `2N λ_max(P(kA)) < 1`.
/// Fails with the required gain when no candidate does.
pub fn certify_gain(
    model: &SystemModel,
    domain: &DomainSpec,
    design: &ObserverDesign,
    grid: &Grid,
    k_candidates: &[f64],
    seed: u64,
) -> Result<GainCert> {
    let constants = gain_constants(model, domain, design, grid, seed)?;
    let mut ladder: Vec<f64> = k_candidates.iter().copied().filter(|k| *k >= 1.0 && k.is_finite()).collect();
    ladder.sort_by(f64::total_cmp);
    match ladder.iter().find(|&&k| constants.n / (k * constants.decay) < 1.0) {
        Some(&k) => cert_at(model, domain, design, grid, constants, k, seed),
        None => Err(Error::NoCertifiedGain { k_required: constants.k_required() }),
    }
}

#[cfg(test)]
mod tests;
