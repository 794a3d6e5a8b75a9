//! Dormand-Prince 5(4) integrator with 4th-order dense output.
//!
//! One engine serves the plant flows, the saturated backward flows and the
//! coupled plant/observer systems; complex observer states are carried as
//! interleaved re/im pairs by the callers. Integration runs forward or
//! backward depending on the sign of `t1 - t0`.

use std::ops::ControlFlow;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    /// Mixed absolute/relative local error tolerance.
    pub tol: f64,
    pub max_steps: usize,
    /// States with Euclidean norm above this are treated as escaped.
    pub escape_norm: f64,
    /// Keep dense-output segments in the returned trajectory.
    pub dense: bool,
    /// Upper bound on |h|; infinite by default.
    pub max_step: f64,
    /// Magnitude of the first trial step; estimated from the field when unset.
    pub first_step: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_steps: 5_000_000, escape_norm: 1e12, dense: false, max_step: f64::INFINITY, first_step: None }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EscapeReason {
    StepUnderflow,
    NormBound,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct Escape {
    /// Estimate of the escape time (last valid time reached).
    pub time: f64,
    pub state: Vec<f64>,
    pub reason: EscapeReason,
}

/// One accepted step with its continuous extension.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    rcont: [Vec<f64>; 5],
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn start(&self) -> &[f64] {
        &self.rcont[0]
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.rcont[0].len()];
        self.eval_into(t, &mut out);
        out
    }

    /// Single component of the interpolant.
    pub fn eval_component(&self, t: f64, i: usize) -> f64 {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])))
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub escape: Option<Escape>,
    pub segments: Vec<DenseStep>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds the initial time")
    }

    pub fn escaped(&self) -> bool {
        self.escape.is_some()
    }

    /// Dense evaluation; requires `OdeOptions::dense`.
    pub fn sample(&self, t: f64) -> Option<Vec<f64>> {
        if self.segments.is_empty() {
            return (t == self.times[0]).then(|| self.states[0].clone());
        }
        let forward = self.segments[0].h > 0.0;
        let idx = self.segments.partition_point(|s| if forward { s.t1() < t } else { s.t1() > t });
        let seg = self.segments.get(idx)?;
        let inside = if forward { t >= seg.t0 && t <= seg.t1() } else { t <= seg.t0 && t >= seg.t1() };
        inside.then(|| seg.eval(t))
    }

    /// Converts an escaped trajectory into an error.
    pub fn complete(self) -> Result<Self> {
        match &self.escape {
            None => Ok(self),
            Some(e) => Err(Error::Integration {
                time: e.time,
                state: e.state.clone(),
                reason: format!("{:?}", e.reason),
            }),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Integrates and records every accepted step.
pub fn integrate<F>(field: F, x0: &[f64], t0: f64, t1: f64, opts: &OdeOptions) -> Trajectory
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut times = vec![t0];
    let mut states = vec![x0.to_vec()];
    let mut segments = Vec::new();
    let dense = opts.dense;
    let escape = integrate_with(field, x0, t0, t1, opts, |step, y1| {
        times.push(step.t1());
        states.push(y1.to_vec());
        if dense {
            segments.push(step.clone());
        }
        ControlFlow::Continue(())
    });
    Trajectory { times, states, escape, segments }
}

/// Endpoint only.
pub fn integrate_to<F>(field: F, x0: &[f64], t0: f64, t1: f64, opts: &OdeOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut last = x0.to_vec();
    let escape = integrate_with(field, x0, t0, t1, opts, |_, y1| {
        last.copy_from_slice(y1);
        ControlFlow::Continue(())
    });
    match escape {
        None => Ok(last),
        Some(e) => Err(Error::Integration { time: e.time, state: e.state, reason: format!("{:?}", e.reason) }),
    }
}

/// Core stepping loop. `on_step` sees every accepted step and may stop the
/// integration early. Returns escape information when the solution could not
/// be continued to `t1`.
pub fn integrate_with<F, S>(
    mut field: F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
    mut on_step: S,
) -> Option<Escape>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: FnMut(&DenseStep, &[f64]) -> ControlFlow<()>,
{
    let n = x0.len();
    let span = t1 - t0;
    if span == 0.0 {
        return None;
    }
    let dir = span.signum();
    let tol = opts.tol;

    let mut t = t0;
    let mut y = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    field(t, &y, &mut k1);
    let h0 = match opts.first_step {
        Some(h) => h.abs(),
        None => initial_step(&mut field, t, &y, &k1, dir, tol, &mut ytmp, &mut k2),
    };
    let mut h = h0.min(opts.max_step.abs()) * dir;
    if h.abs() > span.abs() {
        h = span;
    }
    let mut steps = 0usize;
    let mut last_rejected = false;

    loop {
        if steps >= opts.max_steps {
            return Some(Escape { time: t, state: y, reason: EscapeReason::MaxSteps });
        }
        let min_h = 16.0 * f64::EPSILON * t.abs().max(1e-3);
        if h.abs() < min_h {
            return Some(Escape { time: t, state: y, reason: EscapeReason::StepUnderflow });
        }
        let remaining = t1 - t;
        let last = h.abs() >= remaining.abs() || remaining.abs() - h.abs() <= 1e-14 * remaining.abs().max(t.abs()).max(1.0).min(1e3);
        if last {
            h = remaining;
        }

        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        field(t + C2 * h, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        field(t + C3 * h, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        field(t + C4 * h, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        field(t + C5 * h, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t1 } else { t + h };
        field(t + h, &ytmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        field(t_new, &ynew, &mut k7);

        let mut err = 0.0f64;
        let mut finite = true;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = tol + tol * y[i].abs().max(ynew[i].abs());
            let r = (e / sc).abs();
            if !r.is_finite() || !ynew[i].is_finite() {
                finite = false;
            }
            err = err.max(r);
        }
        if !finite {
            h *= 0.2;
            last_rejected = true;
            steps += 1;
            continue;
        }

        if err <= 1.0 {
            let mut rcont: [Vec<f64>; 5] = Default::default();
            rcont[0] = y.clone();
            let mut r2 = vec![0.0; n];
            let mut r3 = vec![0.0; n];
            let mut r4 = vec![0.0; n];
            let mut r5 = vec![0.0; n];
            for i in 0..n {
                let dy = ynew[i] - y[i];
                let bspl = h * k1[i] - dy;
                r2[i] = dy;
                r3[i] = bspl;
                r4[i] = dy - h * k7[i] - bspl;
                r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            rcont[1] = r2;
            rcont[2] = r3;
            rcont[3] = r4;
            rcont[4] = r5;
            let step = DenseStep { t0: t, h: t_new - t, rcont };

            if norm(&ynew) > opts.escape_norm {
                return Some(Escape { time: t, state: y, reason: EscapeReason::NormBound });
            }

            t = t_new;
            y.copy_from_slice(&ynew);
            k1.copy_from_slice(&k7);
            steps += 1;

            if on_step(&step, &y).is_break() || last {
                return None;
            }

            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 5.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h = (h * fac).abs().min(opts.max_step.abs()) * dir;
            last_rejected = false;
        } else {
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            last_rejected = true;
            steps += 1;
        }
    }
}

/// First trial step the integrator would choose for `field` at `(t0, y0)`
/// integrating towards `t1`.
pub fn suggest_first_step<F>(mut field: F, t0: f64, y0: &[f64], t1: f64, tol: f64) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut f0 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    field(t0, y0, &mut f0);
    initial_step(&mut field, t0, y0, &f0, (t1 - t0).signum(), tol, &mut ytmp, &mut f1)
}

fn initial_step<F>(
    field: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    dir: f64,
    tol: f64,
    ytmp: &mut [f64],
    f1: &mut [f64],
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| tol + tol * v.abs()).collect();
    let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    if !h0.is_finite() {
        h0 = 1e-6;
    }
    for i in 0..n {
        ytmp[i] = y[i] + dir * h0 * f0[i];
    }
    field(t + dir * h0, ytmp, f1);
    let d2 = (f1.iter().zip(f0).zip(&sc).map(|((a, b), s)| ((a - b) / s).powi(2)).sum::<f64>() / n.max(1) as f64)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 || !d2.is_finite() {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn harmonic(_t: f64, x: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -x[0];
    }

    #[test]
    fn harmonic_full_period() {
        let tr = integrate(harmonic, &[1.0, 0.0], 0.0, 2.0 * PI, &OdeOptions::with_tol(1e-10));
        assert!(!tr.escaped());
        let x = tr.last();
        assert!((x[0] - 1.0).abs() < 1e-8 && x[1].abs() < 1e-8, "{x:?}");
        assert_eq!(tr.final_time(), 2.0 * PI);
    }

    #[test]
    fn constant_system_is_frozen() {
        let tr = integrate(|_, _, dx: &mut [f64]| dx.fill(0.0), &[0.3, -2.0], 0.0, 5.0, &OdeOptions::default());
        for s in &tr.states {
            assert_eq!(s, &vec![0.3, -2.0]);
        }
    }

    #[test]
    fn escape_of_tangent() {
        let tr = integrate(|_, x, dx: &mut [f64]| dx[0] = 1.0 + x[0] * x[0], &[0.0], 0.0, 3.0, &OdeOptions::default());
        let esc = tr.escape.expect("tan escapes at pi/2");
        assert!((esc.time - FRAC_PI_2).abs() < 1e-3, "escape at {}", esc.time);
        // underflow is not reached before the default norm bound
        let opts = OdeOptions { escape_norm: f64::INFINITY, ..OdeOptions::default() };
        let esc = integrate(|_, x, dx: &mut [f64]| dx[0] = 1.0 + x[0] * x[0], &[0.0], 0.0, 3.0, &opts).escape.unwrap();
        assert!((esc.time - FRAC_PI_2).abs() < 1e-3);
        assert_ne!(esc.reason, EscapeReason::MaxSteps);
    }

    #[test]
    fn backward_integration_and_reversibility() {
        let tol = 1e-10;
        let opts = OdeOptions::with_tol(tol);
        let vdp = |_t: f64, x: &[f64], dx: &mut [f64]| {
            dx[0] = x[1];
            dx[1] = (1.0 - x[0] * x[0]) * x[1] - x[0];
        };
        let x0 = [0.5, 0.2];
        let fwd = integrate(vdp, &x0, 0.0, 1.0, &opts);
        let back = integrate(vdp, fwd.last(), 1.0, 0.0, &opts);
        assert_eq!(back.final_time(), 0.0);
        for (a, b) in back.last().iter().zip(&x0) {
            assert!((a - b).abs() <= 10.0 * tol * 10.0, "{a} vs {b}");
        }
        assert!(fwd.times.windows(2).all(|w| w[1] > w[0]));
        assert!(back.times.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn dense_output_matches_closed_form() {
        let opts = OdeOptions { tol: 1e-10, dense: true, ..OdeOptions::default() };
        let tr = integrate(harmonic, &[1.0, 0.0], 0.0, 10.0, &opts);
        for k in 0..=100 {
            let t = 0.1 * k as f64;
            let x = tr.sample(t).unwrap();
            assert!((x[0] - t.cos()).abs() < 1e-7);
            assert!((x[1] + t.sin()).abs() < 1e-7);
        }
        let back = integrate(harmonic, &[1.0, 0.0], 0.0, -3.0, &opts);
        let x = back.sample(-1.5).unwrap();
        assert!((x[0] - (-1.5f64).cos()).abs() < 1e-7);
        assert!(back.sample(1.0).is_none());
    }

    #[test]
    fn halving_tol_does_not_increase_error() {
        let mut prev = f64::INFINITY;
        for k in 4..12 {
            let tol = 10f64.powi(-k);
            let tr = integrate(harmonic, &[1.0, 0.0], 0.0, 2.0 * PI, &OdeOptions::with_tol(tol));
            let x = tr.last();
            let err = ((x[0] - 1.0).powi(2) + x[1].powi(2)).sqrt();
            let tr2 = integrate(harmonic, &[1.0, 0.0], 0.0, 2.0 * PI, &OdeOptions::with_tol(tol / 2.0));
            let x2 = tr2.last();
            let err2 = ((x2[0] - 1.0).powi(2) + x2[1].powi(2)).sqrt();
            assert!(err2 <= err * 1.0 + 1e-15, "tol {tol}: {err2} > {err}");
            assert!(err <= prev * 1.0 + 1e-15);
            prev = err;
        }
    }
}
