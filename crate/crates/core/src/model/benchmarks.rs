//! Benchmark plants with closed-form Lie derivatives of the output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::domain::{DomainSpec, Region};
use super::system::SystemModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum BenchmarkSpec {
    /// `ẋ1 = x2, ẋ2 = −x1, y = x1`
    Harmonic,
    /// `ẋ = 0, y = x`
    Constant {
        #[serde(default = "one")]
        dim: usize,
    },
    /// `ẋi = x_{i+1}, ẋ_order = 0, y = x1`
    IntegratorChain { order: usize },
    /// `ẋ1 = x2, ẋ2 = μ(1 − x1²)x2 − x1, y = x1`
    VanDerPol { mu: f64 },
    /// `ẋ1 = x2, ẋ2 = x1 − x1³, y = x1`
    Duffing,
    /// `ẋ = 1 + x², y = x`; escapes in finite time.
    Escape1d,
}

fn one() -> usize {
    1
}

pub const BENCHMARK_NAMES: [&str; 6] = ["harmonic", "constant", "integrator_chain", "van_der_pol", "duffing", "escape1d"];

impl BenchmarkSpec {
    /// Builds a spec from a name and numeric parameters.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |key: &str| {
            params.get(key).copied().ok_or_else(|| Error::BenchmarkParam(format!("`{name}` requires `{key}`")))
        };
        let positive_int = |key: &str| -> Result<usize> {
            let v = get(key)?;
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::BenchmarkParam(format!("`{key}` must be a positive integer, got {v}")))
            }
        };
        let spec = match name {
            "harmonic" => BenchmarkSpec::Harmonic,
            "constant" => BenchmarkSpec::Constant { dim: if params.contains_key("dim") { positive_int("dim")? } else { 1 } },
            "integrator_chain" => BenchmarkSpec::IntegratorChain { order: positive_int("order")? },
            "van_der_pol" => BenchmarkSpec::VanDerPol { mu: get("mu")? },
            "duffing" => BenchmarkSpec::Duffing,
            "escape1d" => BenchmarkSpec::Escape1d,
            other => return Err(Error::UnknownBenchmark(other.to_string())),
        };
        Ok(spec)
    }
}

pub fn benchmark(spec: &BenchmarkSpec) -> Result<SystemModel> {
    let model = match *spec {
        BenchmarkSpec::Harmonic => SystemModel::new(
            "harmonic",
            2,
            1,
            |x, dx| {
                dx[0] = x[1];
                dx[1] = -x[0];
            },
            |x, y| y[0] = x[0],
        )
        .with_lie(|i, x| {
            let v = match i % 4 {
                0 => x[0],
                1 => x[1],
                2 => -x[0],
                _ => -x[1],
            };
            Some(vec![v])
        })
        .with_top_lipschitz(|_, m| (m >= 2).then_some(1.0)),

        BenchmarkSpec::Constant { dim } => {
            if dim == 0 {
                return Err(Error::BenchmarkParam("constant: dim must be positive".into()));
            }
            SystemModel::new(format!("constant({dim})"), dim, dim, |_, dx| dx.fill(0.0), |x, y| y.copy_from_slice(x))
                .with_lie(move |i, x| Some(if i == 0 { x.to_vec() } else { vec![0.0; x.len()] }))
                .with_top_lipschitz(|_, m| (m >= 1).then_some(0.0))
        }

        BenchmarkSpec::IntegratorChain { order } => {
            if order == 0 {
                return Err(Error::BenchmarkParam("integrator_chain: order must be positive".into()));
            }
            SystemModel::new(
                format!("integrator_chain({order})"),
                order,
                1,
                |x, dx| {
                    let n = x.len();
                    dx[..n - 1].copy_from_slice(&x[1..]);
                    dx[n - 1] = 0.0;
                },
                |x, y| y[0] = x[0],
            )
            .with_lie(move |i, x| Some(vec![if i < x.len() { x[i] } else { 0.0 }]))
            .with_top_lipschitz(move |_, m| (m >= order).then_some(0.0))
        }

        BenchmarkSpec::VanDerPol { mu } => {
            if !mu.is_finite() {
                return Err(Error::BenchmarkParam("van_der_pol: mu must be finite".into()));
            }
            SystemModel::new(
                format!("van_der_pol(mu={mu})"),
                2,
                1,
                move |x, dx| {
                    dx[0] = x[1];
                    dx[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
                },
                |x, y| y[0] = x[0],
            )
            .with_lie(move |i, x| {
                let (x1, x2) = (x[0], x[1]);
                let acc = mu * (1.0 - x1 * x1) * x2 - x1;
                let v = match i {
                    0 => x1,
                    1 => x2,
                    2 => acc,
                    3 => -2.0 * mu * x1 * x2 * x2 + (mu * (1.0 - x1 * x1) * acc) - x2,
                    _ => return None,
                };
                Some(vec![v])
            })
        }

        BenchmarkSpec::Duffing => SystemModel::new(
            "duffing",
            2,
            1,
            |x, dx| {
                dx[0] = x[1];
                dx[1] = x[0] - x[0].powi(3);
            },
            |x, y| y[0] = x[0],
        )
        .with_lie(|i, x| {
            let (x1, x2) = (x[0], x[1]);
            let v = match i {
                0 => x1,
                1 => x2,
                2 => x1 - x1.powi(3),
                3 => (1.0 - 3.0 * x1 * x1) * x2,
                4 => -6.0 * x1 * x2 * x2 + (1.0 - 3.0 * x1 * x1) * (x1 - x1.powi(3)),
                _ => return None,
            };
            Some(vec![v])
        })
        .with_top_lipschitz(|domain, m| {
            // |∂(x1 − x1³)/∂x1| = |1 − 3x1²| bounded over the x1-range of the domain
            (m == 2).then(|| {
                let (lo, hi) = x1_abs_range(domain);
                let g = |r: f64| (1.0 - 3.0 * r * r).abs();
                g(lo).max(g(hi))
            })
        }),

        BenchmarkSpec::Escape1d => SystemModel::new(
            "escape1d",
            1,
            1,
            |x, dx| dx[0] = 1.0 + x[0] * x[0],
            |x, y| y[0] = x[0],
        )
        .with_lie(|i, x| {
            let s = 1.0 + x[0] * x[0];
            let v = match i {
                0 => x[0],
                1 => s,
                2 => 2.0 * x[0] * s,
                3 => s * (2.0 + 6.0 * x[0] * x[0]),
                _ => return None,
            };
            Some(vec![v])
        }),
    };
    Ok(model)
}

/// Range of `|x1|` over `cl(O)`.
fn x1_abs_range(domain: &DomainSpec) -> (f64, f64) {
    let (lo, hi) = match &domain.region {
        Region::Box { lower, upper } => (lower[0], upper[0]),
        Region::Ball { center, radius } => (center[0] - radius, center[0] + radius),
    };
    let max = lo.abs().max(hi.abs());
    let min = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
    (min, max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drifts() {
        let h = benchmark(&BenchmarkSpec::Harmonic).unwrap();
        assert_eq!(h.drift_vec(&[1.0, 0.0]), vec![0.0, -1.0]);
        let c = benchmark(&BenchmarkSpec::Constant { dim: 3 }).unwrap();
        assert_eq!(c.drift_vec(&[1.0, -4.0, 2.0]), vec![0.0; 3]);
        let d = benchmark(&BenchmarkSpec::Duffing).unwrap();
        assert_eq!(d.drift_vec(&[2.0, 0.0]), vec![0.0, -6.0]);
        let v = benchmark(&BenchmarkSpec::VanDerPol { mu: 1.0 }).unwrap();
        assert_eq!(v.drift_vec(&[1.0, 0.0]), vec![0.0, -1.0]);
        let ic = benchmark(&BenchmarkSpec::IntegratorChain { order: 3 }).unwrap();
        assert_eq!(ic.drift_vec(&[1.0, 2.0, 3.0]), vec![2.0, 3.0, 0.0]);
    }

    #[test]
    fn names_and_errors() {
        let mut params = BTreeMap::new();
        assert!(matches!(BenchmarkSpec::from_name("lorenz", &params), Err(Error::UnknownBenchmark(_))));
        assert!(BenchmarkSpec::from_name("van_der_pol", &params).is_err());
        params.insert("mu".to_string(), 2.0);
        assert_eq!(BenchmarkSpec::from_name("van_der_pol", &params).unwrap(), BenchmarkSpec::VanDerPol { mu: 2.0 });
        for name in ["harmonic", "duffing", "escape1d", "constant"] {
            assert!(BenchmarkSpec::from_name(name, &BTreeMap::new()).is_ok(), "{name}");
        }
    }

    /// Checks every closed-form Lie derivative against a central difference of
    /// the previous order along `f`.
    #[test]
    fn lie_providers_are_consistent() {
        let specs = [
            BenchmarkSpec::Harmonic,
            BenchmarkSpec::VanDerPol { mu: 1.3 },
            BenchmarkSpec::Duffing,
            BenchmarkSpec::Escape1d,
            BenchmarkSpec::IntegratorChain { order: 3 },
        ];
        for spec in specs {
            let model = benchmark(&spec).unwrap();
            let x: Vec<f64> = (0..model.n()).map(|i| 0.3 + 0.2 * i as f64).collect();
            let f = model.drift_vec(&x);
            assert_eq!(model.lie_derivative(0, &x).unwrap(), model.output_vec(&x));
            let mut order = 1;
            while let Some(li) = model.lie_derivative(order, &x) {
                let eps = 1e-6;
                let xp: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + eps * b).collect();
                let xm: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a - eps * b).collect();
                let prev_p = model.lie_derivative(order - 1, &xp).unwrap();
                let prev_m = model.lie_derivative(order - 1, &xm).unwrap();
                let fd = (prev_p[0] - prev_m[0]) / (2.0 * eps);
                assert!((fd - li[0]).abs() < 1e-6 * (1.0 + li[0].abs()), "{spec:?} order {order}: {fd} vs {}", li[0]);
                order += 1;
                if order > 6 {
                    break;
                }
            }
        }
    }

    #[test]
    fn duffing_gradient_bound() {
        let d = benchmark(&BenchmarkSpec::Duffing).unwrap();
        let dom = DomainSpec::boxed(&[-2.0, -2.0], &[2.0, 2.0]).unwrap();
        assert_eq!(d.top_lipschitz_bound(&dom, 2), Some(11.0));
        assert_eq!(d.top_lipschitz_bound(&dom, 3), None);
    }
}
