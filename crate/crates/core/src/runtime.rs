//! Coupled plant/observer simulation and convergence diagnostics.
//!
//! Four observer forms are supported:
//! - `exact`: `ż = Az + B(h(x))`, estimate `x̂ = T*(z)`;
//! - `approx`: `ż = Az + 𝔉(z) + B(h(x))` with `𝔉 = 𝔈 ∘ T_a*` at unit gain;
//! - `highgain`: the same with `A` replaced by `kA`;
//! - `rescaled`: `ż = γ(y)(Az + B(y))`, integrated in the reparameterized time
//!   `τ = ∫γ(y) dt` so that finite escape of the plant is resolved.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::io::Write;
use std::ops::ControlFlow;
use std::sync::Arc;

use log::warn;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::highgain::{GainCert, HighGainTransform};
use crate::inversion::invert;
use crate::model::system::dist;
use crate::numerics::{
    frobenius, integrate_with, pack, solve_lyapunov_diag, suggest_first_step, unpack, ComplexMatrix, DenseStep,
    EscapeReason, LyapunovSolution, OdeOptions,
};
use crate::transform::{ExactTransform, Transform, TransformTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Approx,
    Highgain,
    Rescaled,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Approx => "approx",
            Mode::Highgain => "highgain",
            Mode::Rescaled => "rescaled",
        }
    }
}

/// Output-dependent time rescaling `γ(y) ≥ 1`.
///
/// Whether `γ` dominates `1 + γ_f(h(x))` for some `V_f` with
/// `L_f V_f ≤ V_f + γ_f(h)` is the user's obligation; only `γ ≥ 1` is checked.
#[derive(Clone)]
pub struct RescaleSpec {
    pub label: String,
    pub note: String,
    gamma: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for RescaleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RescaleSpec({})", self.label)
    }
}

impl RescaleSpec {
    pub fn custom<F>(label: impl Into<String>, note: impl Into<String>, gamma: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { label: label.into(), note: note.into(), gamma: Arc::new(gamma) }
    }

    /// `γ ≡ 1`, under which the rescaled observer is the exact one.
    pub fn unit() -> Self {
        Self::custom("1", "identity rescaling", |_| 1.0)
    }

    /// `γ(y) = c0 + c2·|y|²`.
    pub fn quadratic(c0: f64, c2: f64) -> Result<Self> {
        if !(c0 >= 1.0) || !(c2 >= 0.0) {
            return Err(Error::Config(format!("quadratic rescaling needs c0 ≥ 1 and c2 ≥ 0, got {c0}, {c2}")));
        }
        Ok(Self::custom(format!("{c0}+{c2}|y|^2"), "user-supplied quadratic rescaling", move |y| {
            c0 + c2 * y.iter().map(|v| v * v).sum::<f64>()
        }))
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        (self.gamma)(y)
    }
}

/// The observer run alongside the plant.
#[derive(Debug, Clone, Copy)]
pub enum Observer<'a> {
    Exact { transform: &'a ExactTransform, table: &'a TransformTable },
    /// `transform.k` must be 1.
    Approx { transform: &'a HighGainTransform, table: &'a TransformTable, cert: Option<&'a GainCert> },
    Highgain { transform: &'a HighGainTransform, table: &'a TransformTable, cert: Option<&'a GainCert> },
    Rescaled { transform: &'a ExactTransform, table: &'a TransformTable, gamma: &'a RescaleSpec },
}

impl Observer<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            Observer::Exact { .. } => Mode::Exact,
            Observer::Approx { .. } => Mode::Approx,
            Observer::Highgain { .. } => Mode::Highgain,
            Observer::Rescaled { .. } => Mode::Rescaled,
        }
    }

    fn transform(&self) -> &dyn Transform {
        match *self {
            Observer::Exact { transform, .. } | Observer::Rescaled { transform, .. } => transform,
            Observer::Approx { transform, .. } | Observer::Highgain { transform, .. } => transform,
        }
    }

    fn table(&self) -> &TransformTable {
        match *self {
            Observer::Exact { table, .. }
            | Observer::Rescaled { table, .. }
            | Observer::Approx { table, .. }
            | Observer::Highgain { table, .. } => table,
        }
    }

    /// Spectrum of the observer matrix (`A` or `kA`).
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        match *self {
            Observer::Exact { transform, .. } | Observer::Rescaled { transform, .. } => {
                transform.design.eigenvalues().to_vec()
            }
            Observer::Approx { transform, .. } | Observer::Highgain { transform, .. } => transform.observer_eigenvalues(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimOptions {
    pub t_end: f64,
    pub tol: f64,
    /// Spacing of recorded samples in physical time.
    pub stride: f64,
    pub invert_tol: f64,
    pub escape_norm: f64,
    /// Simulate approx/highgain modes without a satisfied certificate.
    pub override_cert: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { t_end: 10.0, tol: 1e-9, stride: 0.01, invert_tol: 1e-10, escape_norm: 1e12, override_cert: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeInfo {
    /// Physical time of the last accepted state.
    pub time: f64,
    pub reason: String,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub mode: Mode,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub eigenvalues: Vec<Complex64>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub observer: Vec<ComplexMatrix>,
    pub estimates: Vec<Vec<f64>>,
    /// `e(t) = T(x(t)) − z(t)` (or with `T_a`).
    pub transform_error: Vec<ComplexMatrix>,
    pub err_state: Vec<f64>,
    pub err_transform: Vec<f64>,
    pub lyapunov: Vec<f64>,
    pub escape: Option<EscapeInfo>,
    /// First sample time with `x ∉ cl(O)`.
    pub left_region: Option<f64>,
    /// `∫γ(y) dt` over the simulated interval (rescaled mode).
    pub gamma_integral: Option<f64>,
    pub steps: usize,
    pub tol: f64,
}

struct RawSample {
    t: f64,
    x: Vec<f64>,
    z: ComplexMatrix,
}

fn sample_times(t_end: f64, stride: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut j = 0u64;
    loop {
        let t = j as f64 * stride;
        if t > t_end * (1.0 + 1e-12) {
            break;
        }
        out.push(t);
        j += 1;
    }
    if out.last().is_some_and(|&l| l < t_end - 1e-12 * t_end.max(1.0)) {
        out.push(t_end);
    }
    out
}

fn check_cert(transform: &HighGainTransform, cert: Option<&GainCert>, override_cert: bool) -> Result<()> {
    let ok = cert.is_some_and(|c| c.satisfied && c.k == transform.k);
    if ok {
        return Ok(());
    }
    let small_gain = cert.map_or(f64::NAN, |c| c.small_gain);
    if override_cert {
        warn!("simulating at uncertified gain k = {} (override)", transform.k);
        Ok(())
    } else {
        Err(Error::Uncertified { k: transform.k, small_gain })
    }
}

/// Co-integrates plant and observer from `(x0, z0)` and records samples every
/// `opts.stride` until `opts.t_end` or plant escape.
pub fn simulate(observer: Observer<'_>, x0: &[f64], z0: &ComplexMatrix, opts: &SimOptions) -> Result<SimTrace> {
    let transform = observer.transform();
    let table = observer.table();
    table.check_fingerprint(transform.fingerprint())?;
    let n = transform.state_dim();
    let m = transform.rows();
    let p = transform.cols();
    if x0.len() != n {
        return Err(Error::Dimension { expected: n, got: x0.len() });
    }
    if z0.shape() != (m, p) {
        return Err(Error::Dimension { expected: m * p, got: z0.len() });
    }
    if !transform.domain().contains(x0) {
        return Err(Error::Domain(format!("initial state {x0:?} lies outside the region")));
    }
    if !(opts.t_end > 0.0) || !(opts.stride > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::Config("t_end, stride and tol must be positive".into()));
    }
    match observer {
        Observer::Approx { transform, cert, .. } => {
            if transform.k != 1.0 {
                return Err(Error::Design("approx mode runs at unit gain; use highgain for k ≠ 1".into()));
            }
            check_cert(transform, cert, opts.override_cert)?;
        }
        Observer::Highgain { transform, cert, .. } => check_cert(transform, cert, opts.override_cert)?,
        _ => {}
    }

    let (raw, escape, steps, gamma_integral) = match observer {
        Observer::Rescaled { transform, gamma, .. } => integrate_rescaled(transform, gamma, x0, z0, opts)?,
        _ => integrate_physical(observer, x0, z0, opts)?,
    };

    let eigenvalues = observer.eigenvalues();
    let lyap = solve_lyapunov_diag(&eigenvalues)?;
    let domain = transform.domain();
    let processed: Vec<(Vec<f64>, ComplexMatrix, f64, f64, f64)> = raw
        .par_iter()
        .map(|s| {
            let q = invert(table, transform, &s.z, opts.invert_tol)?;
            let e = transform.eval(&s.x)? - &s.z;
            let u = lyap.quadratic_form(&e);
            let es = dist(&q.x_hat, &s.x);
            let et = frobenius(&e);
            Ok((q.x_hat, e, es, et, u))
        })
        .collect::<Result<_>>()?;

    let left_region = raw.iter().find(|s| !domain.contains(&s.x)).map(|s| s.t);
    let mut trace = SimTrace {
        mode: observer.mode(),
        n,
        m,
        p,
        eigenvalues,
        times: Vec::with_capacity(raw.len()),
        states: Vec::with_capacity(raw.len()),
        observer: Vec::with_capacity(raw.len()),
        estimates: Vec::with_capacity(raw.len()),
        transform_error: Vec::with_capacity(raw.len()),
        err_state: Vec::with_capacity(raw.len()),
        err_transform: Vec::with_capacity(raw.len()),
        lyapunov: Vec::with_capacity(raw.len()),
        escape,
        left_region,
        gamma_integral,
        steps,
        tol: opts.tol,
    };
    for (s, (xh, e, es, et, u)) in raw.into_iter().zip(processed) {
        trace.times.push(s.t);
        trace.states.push(s.x);
        trace.observer.push(s.z);
        trace.estimates.push(xh);
        trace.transform_error.push(e);
        trace.err_state.push(es);
        trace.err_transform.push(et);
        trace.lyapunov.push(u);
    }
    Ok(trace)
}

type Integrated = (Vec<RawSample>, Option<EscapeInfo>, usize, Option<f64>);

/// Far endpoint for open-ended integrations that stop from the step callback.
const OPEN_END: f64 = 1e15;

fn escape_info(time: f64, reason: EscapeReason, state: Vec<f64>) -> EscapeInfo {
    EscapeInfo { time, reason: format!("{reason:?}"), state }
}

/// Exact, approx and highgain modes in physical time, state `[x | z]`.
///
/// The integration is open-ended and stopped from the step callback once the
/// step passing `t_end` is accepted, so no step is shortened to land on
/// `t_end`; samples come from the dense output.
fn integrate_physical(observer: Observer<'_>, x0: &[f64], z0: &ComplexMatrix, opts: &SimOptions) -> Result<Integrated> {
    let transform = observer.transform();
    let table = observer.table();
    let n = x0.len();
    let (m, p) = z0.shape();
    let lambdas = observer.eigenvalues();
    let failure: RefCell<Option<Error>> = RefCell::new(None);

    let (model, injection) = match observer {
        Observer::Exact { transform, .. } => (&transform.sys.base, &transform.design.injection),
        Observer::Approx { transform, .. } | Observer::Highgain { transform, .. } => {
            (&transform.model, &transform.design.injection)
        }
        Observer::Rescaled { .. } => unreachable!("rescaled mode integrates in reparameterized time"),
    };
    let high_gain = match observer {
        Observer::Approx { transform, .. } | Observer::Highgain { transform, .. } => Some(transform),
        _ => None,
    };
    let invert_tol = opts.invert_tol;
    let mut y = vec![0.0; p];
    let mut b = vec![0.0; p];
    let mut field = |_t: f64, s: &[f64], d: &mut [f64]| {
        let (xs, zs) = s.split_at(n);
        let (dx, dz) = d.split_at_mut(n);
        model.drift(xs, dx);
        model.output(xs, &mut y);
        injection.apply(&y, &mut b);
        let correction = match high_gain {
            Some(ta) => {
                let z = unpack(zs, m, p);
                let f = invert(table, transform, &z, invert_tol).and_then(|q| ta.error(&q.x_hat));
                match f {
                    Ok(f) => Some(f),
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        d.fill(f64::NAN);
                        return;
                    }
                }
            }
            None => None,
        };
        for i in 0..m {
            for j in 0..p {
                let k = 2 * (i * p + j);
                let z = Complex64::new(zs[k], zs[k + 1]);
                let mut v = lambdas[i] * z + b[j];
                if let Some(c) = &correction {
                    v += c[(i, j)];
                }
                dz[k] = v.re;
                dz[k + 1] = v.im;
            }
        }
    };

    let mut init = x0.to_vec();
    init.resize(n + 2 * m * p, 0.0);
    pack(z0, &mut init[n..]);
    let first = suggest_first_step(&mut field, 0.0, &init, opts.t_end, opts.tol);
    let ode = OdeOptions {
        tol: opts.tol,
        escape_norm: opts.escape_norm,
        first_step: Some(first),
        ..OdeOptions::default()
    };
    let times = sample_times(opts.t_end, opts.stride);
    let mut next = 0usize;
    let mut raw = Vec::with_capacity(times.len());
    raw.push(RawSample { t: 0.0, x: x0.to_vec(), z: z0.clone() });
    next += 1;
    let mut steps = 0usize;
    let mut buf = vec![0.0; init.len()];
    let escape = integrate_with(&mut field, &init, 0.0, OPEN_END, &ode, |step: &DenseStep, _y| {
        steps += 1;
        while next < times.len() && times[next] <= step.t1() {
            step.eval_into(times[next], &mut buf);
            raw.push(RawSample { t: times[next], x: buf[..n].to_vec(), z: unpack(&buf[n..], m, p) });
            next += 1;
        }
        if next >= times.len() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let escape = escape.map(|e| escape_info(e.time, e.reason, e.state[..n].to_vec()));
    Ok((raw, escape, steps, None))
}

/// Rescaled mode in `τ`, state `[t | x | z]` with `dt/dτ = 1/γ`,
/// `dx/dτ = f(x)/γ`, `dz/dτ = Az + B(y)`. Physical-time samples are located by
/// bisection on the dense output of `t(τ)`, which is increasing.
fn integrate_rescaled(
    transform: &ExactTransform,
    gamma: &RescaleSpec,
    x0: &[f64],
    z0: &ComplexMatrix,
    opts: &SimOptions,
) -> Result<Integrated> {
    let model = &transform.sys.base;
    let injection = &transform.design.injection;
    let lambdas = transform.design.eigenvalues().to_vec();
    let n = x0.len();
    let (m, p) = z0.shape();
    let violation: RefCell<Option<Error>> = RefCell::new(None);
    let mut y = vec![0.0; p];
    let mut b = vec![0.0; p];
    let mut field_tau = |_tau: f64, s: &[f64], d: &mut [f64]| {
        let xs = &s[1..=n];
        let zs = &s[1 + n..];
        model.output(xs, &mut y);
        let g = gamma.eval(&y);
        if !(g >= 1.0) {
            violation.borrow_mut().get_or_insert(Error::RescaleViolation { y: y.clone(), gamma: g });
        }
        let (dt, rest) = d.split_at_mut(1);
        let (dx, dz) = rest.split_at_mut(n);
        dt[0] = 1.0 / g;
        model.drift(xs, dx);
        dx.iter_mut().for_each(|v| *v /= g);
        injection.apply(&y, &mut b);
        for i in 0..m {
            for j in 0..p {
                let k = 2 * (i * p + j);
                let v = lambdas[i] * Complex64::new(zs[k], zs[k + 1]) + b[j];
                dz[k] = v.re;
                dz[k + 1] = v.im;
            }
        }
    };

    // first step from the physical-time field, so that γ ≡ 1 reproduces the
    // exact mode step for step
    let mut init_phys = x0.to_vec();
    init_phys.resize(n + 2 * m * p, 0.0);
    pack(z0, &mut init_phys[n..]);
    let mut yy = vec![0.0; p];
    let mut bb = vec![0.0; p];
    let first = suggest_first_step(
        |_, s: &[f64], d: &mut [f64]| {
            let (xs, zs) = s.split_at(n);
            let (dx, dz) = d.split_at_mut(n);
            model.drift(xs, dx);
            model.output(xs, &mut yy);
            injection.apply(&yy, &mut bb);
            for i in 0..m {
                for j in 0..p {
                    let k = 2 * (i * p + j);
                    let v = lambdas[i] * Complex64::new(zs[k], zs[k + 1]) + bb[j];
                    dz[k] = v.re;
                    dz[k + 1] = v.im;
                }
            }
        },
        0.0,
        &init_phys,
        opts.t_end,
        opts.tol,
    );

    let mut init = vec![0.0];
    init.extend_from_slice(&init_phys);
    let ode = OdeOptions { tol: opts.tol, escape_norm: opts.escape_norm, first_step: Some(first), ..OdeOptions::default() };
    let times = sample_times(opts.t_end, opts.stride);
    let mut next = 1usize;
    let mut raw = vec![RawSample { t: 0.0, x: x0.to_vec(), z: z0.clone() }];
    let mut steps = 0usize;
    let mut tau_end = 0.0;
    let mut buf = vec![0.0; init.len()];
    let escape = integrate_with(&mut field_tau, &init, 0.0, OPEN_END, &ode, |step: &DenseStep, y1| {
        steps += 1;
        tau_end = step.t1();
        let t_start = step.start()[0];
        while next < times.len() && times[next] <= y1[0] {
            let target = times[next];
            let (mut lo, mut hi) = (step.t0, step.t1());
            let (mut t_lo, mut t_hi) = (t_start, y1[0]);
            for _ in 0..200 {
                if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let tm = step.eval_component(mid, 0);
                if tm < target {
                    lo = mid;
                    t_lo = tm;
                } else {
                    hi = mid;
                    t_hi = tm;
                }
            }
            let tau = if (target - t_lo).abs() < (t_hi - target).abs() { lo } else { hi };
            step.eval_into(tau, &mut buf);
            raw.push(RawSample { t: target, x: buf[1..=n].to_vec(), z: unpack(&buf[1 + n..], m, p) });
            next += 1;
        }
        if next >= times.len() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    if let Some(e) = violation.into_inner() {
        return Err(e);
    }
    let escape = escape.map(|e| {
        tau_end = e.time;
        escape_info(e.state[0], e.reason, e.state[1..=n].to_vec())
    });
    Ok((raw, escape, steps, Some(tau_end)))
}

/// Least-squares slope of `ln|e(t)|` over samples with `t ∈ [t0, t1]`.
pub fn estimate_rate(trace: &SimTrace, window: (f64, f64)) -> Result<f64> {
    let pts: Vec<(f64, f64)> = trace
        .times
        .iter()
        .zip(&trace.err_transform)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, e)| (*t, *e))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Config(format!("rate window {window:?} holds fewer than two samples")));
    }
    if let Some(&(_, e)) = pts.iter().find(|(_, e)| *e < 1e-13) {
        return Err(Error::RateUnidentifiable(e));
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ml = pts.iter().map(|p| p.1.ln()).sum::<f64>() / k;
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1.ln() - ml)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(num / den)
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovVerdict {
    pub values: Vec<f64>,
    /// `U(t_{j+1}) ≤ U(t_j)·(1 + 10·tol) + floor` for every recorded sample.
    pub monotone: bool,
    pub first_violation: Option<usize>,
    pub floor: f64,
}

/// `U(t) = Σ ē_iᵀ P e_i` along the trace and its monotonicity verdict with
/// relative slack `10·tol` and absolute slack `floor`.
pub fn lyapunov_trace(trace: &SimTrace, p: &LyapunovSolution, floor: f64) -> LyapunovVerdict {
    let values: Vec<f64> = trace.transform_error.iter().map(|e| p.quadratic_form(e)).collect();
    let slack = 1.0 + 10.0 * trace.tol;
    let first_violation = values.windows(2).position(|w| w[1] > w[0] * slack + floor).map(|j| j + 1);
    LyapunovVerdict { values, monotone: first_violation.is_none(), first_violation, floor }
}

/// Absolute resolution of `U` for a trace: the integrator controls `x` and
/// `z` only to `tol·(1 + |·|)`, so `e = T(x) − z` is resolved to about
/// `tol·(1 + max|z|)` per entry and `U` to `λ_max(P)·m·p` times its square.
pub fn lyapunov_resolution(trace: &SimTrace, p: &LyapunovSolution) -> f64 {
    let zmax = trace.observer.iter().map(frobenius).fold(0.0, f64::max);
    let tmax = trace.transform_error.iter().zip(&trace.observer).map(|(e, z)| frobenius(&(e + z))).fold(0.0, f64::max);
    let r = 10.0 * trace.tol * (1.0 + zmax.max(tmax));
    p.lambda_max * (trace.m * trace.p) as f64 * r * r
}

/// `max_t |e(t) − exp(At) e(0)|` for the observer matrix of the trace.
pub fn error_identity_gap(trace: &SimTrace) -> f64 {
    let Some(e0) = trace.transform_error.first() else { return 0.0 };
    trace
        .times
        .iter()
        .zip(&trace.transform_error)
        .map(|(t, e)| {
            let pred = ComplexMatrix::from_fn(e0.nrows(), e0.ncols(), |i, j| (trace.eigenvalues[i] * *t).exp() * e0[(i, j)]);
            frobenius(&(e - pred))
        })
        .fold(0.0, f64::max)
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Samples taken while the plant was in `cl(O)`.
    pub fn stayed_in_region(&self) -> bool {
        self.left_region.is_none()
    }

    pub fn header(&self) -> String {
        let mut h = String::from("t");
        for i in 1..=self.n {
            write!(h, ",x_{i}").unwrap();
        }
        for i in 1..=self.m {
            for j in 1..=self.p {
                write!(h, ",re_z_{i}{j},im_z_{i}{j}").unwrap();
            }
        }
        for i in 1..=self.n {
            write!(h, ",xhat_{i}").unwrap();
        }
        h.push_str(",err_state,err_transform,U");
        h
    }

    /// CSV export; the first line is a `#` comment carrying provenance.
    pub fn write_csv<W: Write>(&self, w: &mut W, config_hash: u64, seed: u64) -> Result<()> {
        writeln!(w, "# mode={} config_hash={config_hash:016x} seed={seed}", self.mode.label())?;
        writeln!(w, "{}", self.header())?;
        for k in 0..self.len() {
            let mut line = format!("{}", self.times[k]);
            for v in &self.states[k] {
                write!(line, ",{v}").unwrap();
            }
            for i in 0..self.m {
                for j in 0..self.p {
                    let z = self.observer[k][(i, j)];
                    write!(line, ",{},{}", z.re, z.im).unwrap();
                }
            }
            for v in &self.estimates[k] {
                write!(line, ",{v}").unwrap();
            }
            write!(line, ",{},{},{}", self.err_state[k], self.err_transform[k], self.lyapunov[k]).unwrap();
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSummary {
    pub mode: Mode,
    pub config_hash: String,
    pub seed: u64,
    pub samples: usize,
    pub steps: usize,
    pub t_final: f64,
    pub escape: Option<EscapeInfo>,
    pub left_region: Option<f64>,
    pub gamma_integral: Option<f64>,
    pub final_err_state: f64,
    pub final_err_transform: f64,
    pub max_err_transform: f64,
    /// Exact observer only.
    pub error_identity_gap: Option<f64>,
    pub rate: Option<f64>,
    pub rate_window: Option<(f64, f64)>,
    pub lyapunov_monotone: bool,
    pub lyapunov_floor: f64,
}

impl SimSummary {
    pub fn new(trace: &SimTrace, config_hash: u64, seed: u64, rate_window: Option<(f64, f64)>) -> Result<Self> {
        let lyap = solve_lyapunov_diag(&trace.eigenvalues)?;
        let floor = lyapunov_resolution(trace, &lyap);
        let verdict = lyapunov_trace(trace, &lyap, floor);
        let rate = rate_window.and_then(|w| estimate_rate(trace, w).ok());
        Ok(Self {
            mode: trace.mode,
            config_hash: format!("{config_hash:016x}"),
            seed,
            samples: trace.len(),
            steps: trace.steps,
            t_final: trace.times.last().copied().unwrap_or(0.0),
            escape: trace.escape.clone(),
            left_region: trace.left_region,
            gamma_integral: trace.gamma_integral,
            final_err_state: trace.err_state.last().copied().unwrap_or(0.0),
            final_err_transform: trace.err_transform.last().copied().unwrap_or(0.0),
            max_err_transform: trace.err_transform.iter().copied().fold(0.0, f64::max),
            error_identity_gap: (trace.mode == Mode::Exact).then(|| error_identity_gap(trace)),
            rate,
            rate_window,
            lyapunov_monotone: verdict.monotone,
            lyapunov_floor: floor,
        })
    }
}
