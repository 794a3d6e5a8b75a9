//! Generic eigenvalue sampling and empirical injectivity certificates for a
//! tabulated transform.
//!
//! Injectivity is only ever checked a posteriori on the grid: the exceptional
//! set of eigenvalue choices for which it fails has measure zero but is not
//! computable, so eigenvalues are drawn at random and the modulus is measured.

use std::ops::ControlFlow;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SaturatedSystem;
use crate::model::system::dist;
use crate::numerics::{integrate_with, OdeOptions};
use crate::transform::TransformTable;

/// Above this many node pairs, a seeded uniform subsample of this size is used.
pub const MAX_PAIRS: usize = 1_000_000;

/// Inflation of the fitted envelope.
const ENVELOPE_INFLATION: f64 = 1.05;

/// Draws `n + 1` eigenvalues uniformly from `Re ∈ [4ℓ, ℓ)`, `Im ∈ [0, 3|ℓ|]`,
/// rejecting draws closer than `1e-3·|ℓ|` to an earlier one. With
/// `conjugate_closed` the values come in conjugate pairs, plus one real value
/// when `n + 1` is odd.
pub fn sample_eigenvalues(n: usize, ell: f64, seed: u64, conjugate_closed: bool) -> Result<Vec<Complex64>> {
    if !(ell < 0.0) || !ell.is_finite() {
        return Err(Error::Design(format!("decay bound must be negative, got {ell}")));
    }
    let count = n + 1;
    let mag = ell.abs();
    let min_gap = 1e-3 * mag;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Complex64> = Vec::with_capacity(count);
    let far_enough = |out: &[Complex64], c: Complex64| out.iter().all(|o| (o - c).norm() >= min_gap);
    while out.len() < count {
        let re = rng.random_range(4.0 * ell..ell);
        let remaining = count - out.len();
        if conjugate_closed && remaining % 2 == 1 {
            let c = Complex64::new(re, 0.0);
            if far_enough(&out, c) {
                out.push(c);
            }
        } else if conjugate_closed {
            let im = rng.random_range(0.0..=3.0 * mag);
            let (a, b) = (Complex64::new(re, im), Complex64::new(re, -im));
            if 2.0 * im >= min_gap && far_enough(&out, a) && far_enough(&out, b) {
                out.push(a);
                out.push(b);
            }
        } else {
            let c = Complex64::new(re, rng.random_range(0.0..=3.0 * mag));
            if far_enough(&out, c) {
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Knot of the piecewise-linear envelope `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Knot {
    pub dt: f64,
    pub dx: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WorstPair {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub dx: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InjectivityReport {
    /// `min |T(x₁)−T(x₂)| / |x₁−x₂|` over tested pairs.
    pub modulus: f64,
    /// Knots of `ρ`, starting at `(0, 0)`, nondecreasing in both coordinates.
    pub rho_fit: Vec<Knot>,
    pub pairs: usize,
    /// Pairs with `T(x₁) = T(x₂)` and `x₁ ≠ x₂`.
    pub collisions: usize,
    pub worst: Option<WorstPair>,
    pub seed: u64,
}

impl InjectivityReport {
    /// Evaluates `ρ(s)`, extrapolating linearly beyond the last knot. A flat
    /// last segment is replaced by the chord through the origin so that the
    /// extension stays unbounded.
    pub fn rho(&self, s: f64) -> f64 {
        let k = &self.rho_fit;
        if s <= 0.0 || k.len() < 2 {
            return 0.0;
        }
        let pos = k.partition_point(|q| q.dt < s);
        if pos < k.len() {
            let (a, b) = (k[pos - 1], k[pos]);
            if b.dt == a.dt {
                return b.dx;
            }
            return a.dx + (b.dx - a.dx) * (s - a.dt) / (b.dt - a.dt);
        }
        let (a, b) = (k[k.len() - 2], k[k.len() - 1]);
        let mut slope = (b.dx - a.dx) / (b.dt - a.dt);
        if !(slope > 0.0) {
            slope = b.dx / b.dt;
        }
        b.dx + slope * (s - b.dt)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Node pairs `(i, j)`, `i < j`, over the table nodes lying in `cl(O)`: all of
/// them, or [`MAX_PAIRS`] seeded uniform draws when there are more.
fn node_pairs(count: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = count * count.saturating_sub(1) / 2;
    if total <= MAX_PAIRS {
        let mut out = Vec::with_capacity(total);
        for i in 0..count {
            for j in i + 1..count {
                out.push((i, j));
            }
        }
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..MAX_PAIRS)
        .map(|_| loop {
            let i = rng.random_range(0..count);
            let j = rng.random_range(0..count);
            if i != j {
                break (i.min(j), i.max(j));
            }
        })
        .collect()
}

fn matrix_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Modulus and `ρ` envelope over node pairs of the table.
///
/// The envelope is the least nondecreasing majorant of the scatter
/// `(|ΔT|, |Δx|)`, inflated by 5%. Colliding pairs cannot be bounded by any
/// `ρ` with `ρ(0) = 0`; they force the modulus to zero and are left out of the
/// envelope.
pub fn injectivity_modulus(table: &TransformTable, seed: u64) -> InjectivityReport {
    let nodes: Vec<usize> = table.domain_nodes();
    let coords: Vec<Vec<f64>> = nodes.iter().map(|&i| table.node(i)).collect();
    let pairs = node_pairs(nodes.len(), seed);
    let scatter: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let dx = dist(&coords[a], &coords[b]);
            let dt = matrix_distance(table.value_slice(nodes[a]), table.value_slice(nodes[b]));
            (dt, dx)
        })
        .collect();

    let mut modulus = f64::INFINITY;
    let mut worst = None;
    let mut collisions = 0;
    for (k, &(dt, dx)) in scatter.iter().enumerate() {
        if dx == 0.0 {
            continue;
        }
        if dt == 0.0 {
            collisions += 1;
        }
        let ratio = dt / dx;
        if ratio < modulus {
            modulus = ratio;
            worst = Some(k);
        }
    }
    if worst.is_none() {
        modulus = 0.0;
    }

    let mut sorted: Vec<(f64, f64)> = scatter.iter().copied().filter(|&(dt, dx)| dt > 0.0 && dx > 0.0).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut rho_fit = vec![Knot { dt: 0.0, dx: 0.0 }];
    let mut running = 0.0f64;
    for (dt, dx) in sorted {
        let v = dx * ENVELOPE_INFLATION;
        if v > running {
            running = v;
            let last = rho_fit.last_mut().expect("non-empty");
            if last.dt == dt {
                last.dx = v;
            } else {
                rho_fit.push(Knot { dt, dx: v });
            }
        }
    }

    InjectivityReport {
        modulus,
        rho_fit,
        pairs: scatter.len(),
        collisions,
        worst: worst.map(|k| {
            let (a, b) = pairs[k];
            WorstPair { x1: coords[a].clone(), x2: coords[b].clone(), dx: scatter[k].1, dt: scatter[k].0 }
        }),
        seed,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairSeparation {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// `sup_{t ∈ [−horizon, 0]} |h(X̆(x₁,t)) − h(X̆(x₂,t))|`.
    pub separation: f64,
    /// Separation below the threshold.
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistinguishabilityReport {
    pub horizon: f64,
    pub threshold: f64,
    pub pairs: Vec<PairSeparation>,
    /// Pairs outside `O + δ_Υ` (checked anyway).
    pub outside_upsilon: usize,
}

impl DistinguishabilityReport {
    pub fn flagged(&self) -> usize {
        self.pairs.iter().filter(|p| p.flagged).count()
    }
}

/// Backward output separation of state pairs under the saturated flow.
///
/// The supremum is taken over every accepted step and 63 interior points
/// of each step's dense output.
pub fn distinguishability_check(
    sys: &SaturatedSystem,
    pairs: &[(Vec<f64>, Vec<f64>)],
    horizon: f64,
    threshold: f64,
) -> DistinguishabilityReport {
    let n = sys.base.n();
    let upsilon = sys.domain.margins.upsilon;
    let mut outside = 0;
    let mut out = Vec::with_capacity(pairs.len());
    for (x1, x2) in pairs {
        if sys.domain.distance(x1) > upsilon || sys.domain.distance(x2) > upsilon {
            outside += 1;
        }
        let mut init = x1.clone();
        init.extend_from_slice(x2);
        let out_gap = |s: &[f64]| {
            let (y1, y2) = (sys.base.output_vec(&s[..n]), sys.base.output_vec(&s[n..]));
            dist(&y1, &y2)
        };
        let mut sup = out_gap(&init);
        let mut buf = vec![0.0; 2 * n];
        integrate_with(
            |_, s, d| {
                let (d1, d2) = d.split_at_mut(n);
                sys.field(&s[..n], d1);
                sys.field(&s[n..], d2);
            },
            &init,
            0.0,
            -horizon,
            &OdeOptions::with_tol(1e-10),
            |step, y| {
                for q in 1..64 {
                    step.eval_into(step.t0 + step.h * q as f64 / 64.0, &mut buf);
                    sup = sup.max(out_gap(&buf));
                }
                sup = sup.max(out_gap(y));
                ControlFlow::Continue(())
            },
        );
        out.push(PairSeparation { x1: x1.clone(), x2: x2.clone(), separation: sup, flagged: !(sup > threshold) });
    }
    DistinguishabilityReport { horizon, threshold, pairs: out, outside_upsilon: outside }
}
