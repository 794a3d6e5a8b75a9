//! Numerical left inverse of a transform: the nearest-point map
//! `x̂ = argmin_{x ∈ cl(O)} |T(x) − z|`, seeded from a table and refined by
//! projected damped Gauss-Newton.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::injectivity::InjectivityReport;
use crate::model::sample_region;
use crate::model::system::dist;
use crate::numerics::{frobenius, ComplexMatrix};
use crate::transform::{Transform, TransformTable};

/// Refinement iteration cap.
pub const MAX_ITERATIONS: usize = 50;
/// Backtracking halvings per line search.
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Serialize)]
pub struct InverseQuery {
    #[serde(skip)]
    pub z: ComplexMatrix,
    pub x_hat: Vec<f64>,
    /// `|T(x̂) − z|`.
    pub residual: f64,
    pub seed_index: usize,
    pub seed_residual: f64,
    pub iterations: usize,
}

fn residual_vector(tz: &ComplexMatrix, z: &ComplexMatrix) -> DVector<f64> {
    let d = tz - z;
    let mut out = DVector::zeros(2 * d.len());
    for (k, v) in d.iter().enumerate() {
        out[2 * k] = v.re;
        out[2 * k + 1] = v.im;
    }
    out
}

/// Grid node of the table minimizing `|T(x_g) − z|` over `cl(O)`, lowest
/// index on ties.
pub fn seed_node(table: &TransformTable, z: &ComplexMatrix) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for idx in table.domain_nodes() {
        let r = frobenius(&(table.value(idx) - z));
        if r < best.1 {
            best = (idx, r);
        }
    }
    best
}

/// Nearest-point inverse of `transform` at `z`.
///
/// The Jacobian is a central difference of `transform.eval` with step
/// `1e-5·(1 + |x|)`; every iterate is projected onto `cl(O)` and accepted only
/// if it lowers the residual, so the result never does worse than the seed.
pub fn invert<T: Transform + ?Sized>(
    table: &TransformTable,
    transform: &T,
    z: &ComplexMatrix,
    tol: f64,
) -> Result<InverseQuery> {
    table.check_fingerprint(transform.fingerprint())?;
    if z.shape() != (transform.rows(), transform.cols()) {
        return Err(Error::Dimension { expected: transform.rows() * transform.cols(), got: z.len() });
    }
    let domain = transform.domain();
    let n = transform.state_dim();
    let (seed_index, seed_residual) = seed_node(table, z);
    if seed_index == usize::MAX {
        return Err(Error::TableFormat("table has no node inside the region".into()));
    }
    let mut x = table.node(seed_index);
    let mut r = residual_vector(&table.value(seed_index), z);
    let mut res = seed_residual;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS && res > 0.0 {
        iterations += 1;
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = 1e-5 * (1.0 + xn);
        let mut jac = DMatrix::zeros(r.len(), n);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (residual_vector(&transform.eval(&xp)?, z) - residual_vector(&transform.eval(&xm)?, z)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let step = match jac.svd(true, true).solve(&(-&r), 1e-14) {
            Ok(s) => s,
            Err(_) => break,
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            let trial = domain.project(&trial);
            let tr = residual_vector(&transform.eval(&trial)?, z);
            let tres = tr.norm();
            if tres < res {
                accepted = Some((trial, tr, tres));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, tr, tres)) = accepted else { break };
        let moved = dist(&trial, &x);
        x = trial;
        r = tr;
        res = tres;
        if moved < tol {
            break;
        }
    }
    Ok(InverseQuery { z: z.clone(), x_hat: x, residual: res, seed_index, seed_residual, iterations })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityStats {
    pub samples: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    /// Largest `|x̂ − x| − [ρ(2|T(x) − z|) + spacing]` seen.
    pub max_excess: f64,
    /// Largest reconstruction error `|x̂ − x|`.
    pub max_error: f64,
    /// Returned estimates outside `cl(O)`.
    pub outside: usize,
    pub seed: u64,
}

/// Seeded check of `|T*(z) − x| ≤ ρ(2|T(x) − z|) + grid spacing` for
/// `x ∈ cl(O)` and `z = T(x) + Δ`, `|Δ| = perturbation·u`, `u ∈ [0, 1)`.
pub fn check_uniform_continuity<T: Transform + ?Sized>(
    table: &TransformTable,
    transform: &T,
    report: &InjectivityReport,
    samples: usize,
    perturbation: f64,
    seed: u64,
    tol: f64,
) -> Result<ContinuityStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = table.grid.cell_diameter();
    let domain = transform.domain();
    let mut stats = ContinuityStats {
        samples,
        violations: 0,
        violation_fraction: 0.0,
        max_excess: f64::NEG_INFINITY,
        max_error: 0.0,
        outside: 0,
        seed,
    };
    for _ in 0..samples {
        let x = sample_region(domain, &mut rng);
        let tx = transform.eval(&x)?;
        let mut delta = ComplexMatrix::from_fn(tx.nrows(), tx.ncols(), |_, _| {
            num_complex::Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let norm = frobenius(&delta);
        let scale = perturbation * rng.random::<f64>();
        if norm > 0.0 {
            delta *= num_complex::Complex64::new(scale / norm, 0.0);
        }
        let z = &tx + &delta;
        let q = invert(table, transform, &z, tol)?;
        if !domain.contains(&q.x_hat) {
            stats.outside += 1;
        }
        let err = dist(&q.x_hat, &x);
        let bound = report.rho(2.0 * frobenius(&(tx - &z))) + spacing;
        stats.max_error = stats.max_error.max(err);
        stats.max_excess = stats.max_excess.max(err - bound);
        if err > bound {
            stats.violations += 1;
        }
    }
    stats.violation_fraction = stats.violations as f64 / samples.max(1) as f64;
    Ok(stats)
}
