use super::*;
use crate::design::Injection;
use crate::model::{benchmark, BenchmarkSpec, Margins, Region};
use crate::numerics::{frobenius, integrate, OdeOptions};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Closed-form transform of the harmonic oscillator for a single eigenvalue,
/// from `∂T·f = λT + x1` with `T` linear.
fn sylvester(l: Complex64, x: &[f64]) -> Complex64 {
    -(l * x[0] + x[1]) / (1.0 + l * l)
}

fn harmonic_system() -> SaturatedSystem {
    let domain = DomainSpec::new(
        Region::Box { lower: vec![-1.0, -1.0], upper: vec![1.0, 1.0] },
        Margins { upsilon: 0.25, distinguish: 0.5, cutoff: 1.0 },
    )
    .unwrap();
    SaturatedSystem::new(benchmark(&BenchmarkSpec::Harmonic).unwrap(), domain).unwrap()
}

fn constant_system() -> SaturatedSystem {
    let domain = DomainSpec::boxed(&[-2.0], &[2.0]).unwrap();
    SaturatedSystem::new(benchmark(&BenchmarkSpec::Constant { dim: 1 }).unwrap(), domain).unwrap()
}

#[test]
fn constant_system_closed_form() {
    let sys = constant_system();
    let design = ObserverDesign::real(&[-2.0]).unwrap();
    let t = eval_t(&sys, &design, &[1.0], select_horizon(&design, 4.0, 1e-12), 1e-10).unwrap();
    assert_abs_diff_eq!(t[(0, 0)].re, 0.5, epsilon = 1e-9);
    assert_eq!(t[(0, 0)].im, 0.0);
}

#[test]
fn harmonic_single_eigenvalues() {
    let sys = harmonic_system();
    for (l, expected) in [(-1.0, 0.5), (-2.0, 0.4)] {
        let design = ObserverDesign::real(&[l]).unwrap();
        let t = eval_t(&sys, &design, &[1.0, 0.0], 40.0, 1e-10).unwrap();
        assert_abs_diff_eq!(t[(0, 0)].re, expected, epsilon = 1e-7);
    }
}

#[test]
fn horizon_and_dimension_errors() {
    let sys = harmonic_system();
    let design = ObserverDesign::real(&[-1.0]).unwrap();
    assert!(matches!(eval_t(&sys, &design, &[0.0, 0.0], 0.0, 1e-9), Err(Error::Horizon(_))));
    assert!(matches!(eval_t(&sys, &design, &[0.0], 1.0, 1e-9), Err(Error::Dimension { .. })));
}

#[test]
fn horizon_selection() {
    let d1 = ObserverDesign::real(&[-1.0, -3.0]).unwrap();
    assert_abs_diff_eq!(select_horizon(&d1, 1.0, 1e-9), 1e9f64.ln(), epsilon = 1e-12);
    assert!((select_horizon(&d1, 1.0, 1e-9) - 20.72).abs() < 5e-3);
    let d2 = ObserverDesign::real(&[-2.0, -5.0]).unwrap();
    assert_abs_diff_eq!(select_horizon(&d2, 1.0, 1e-9), 5e8f64.ln() / 2.0, epsilon = 1e-12);
    assert!((select_horizon(&d2, 1.0, 1e-9) - 10.02).abs() < 5e-3);
    let cbound = 3.0;
    let tol = cbound * (-1.0f64).exp();
    assert_abs_diff_eq!(select_horizon(&d1, cbound, tol), 1.0, epsilon = 1e-12);
    // a loose tolerance clamps to one time constant
    assert_eq!(select_horizon(&d2, cbound, 10.0 * cbound), 0.5);
}

#[test]
fn amplitude_bound_harmonic() {
    let sys = harmonic_system();
    let design = ObserverDesign::real(&[-1.0, -2.0]).unwrap();
    // sup |x1| over the collar is 1 + δ_u = 2, times √m
    assert_abs_diff_eq!(amplitude_bound(&sys, &design, 41), 2.0 * 2f64.sqrt(), epsilon = 1e-12);
}

#[test]
fn tabulated_harmonic_matches_oracle() {
    let sys = harmonic_system();
    let design = ObserverDesign::real(&[-1.0, -2.0, -3.0]).unwrap();
    let tr = ExactTransform::with_auto_horizon(sys.clone(), design.clone(), 1e-9, 1e-10).unwrap();
    let grid = Grid::over(&sys.domain, vec![11, 11]).unwrap();
    let table = tabulate(&tr, grid).unwrap();
    let mut worst = 0.0f64;
    for idx in 0..table.num_nodes() {
        let x = table.node(idx);
        let v = table.value(idx);
        for (i, l) in design.eigenvalues().iter().enumerate() {
            worst = worst.max((v[(i, 0)] - sylvester(*l, &x)).norm());
        }
    }
    assert!(worst <= 1e-6, "max error {worst}");
}

#[test]
fn single_node_table_is_single_eval() {
    let sys = harmonic_system();
    let design = ObserverDesign::real(&[-1.0, -2.0]).unwrap();
    let tr = ExactTransform::new(sys.clone(), design, 25.0, 1e-9).unwrap();
    let table = tabulate(&tr, Grid::over(&sys.domain, vec![1, 1]).unwrap()).unwrap();
    assert_eq!(table.num_nodes(), 1);
    assert_eq!(table.node(0), vec![0.0, 0.0]);
    assert_eq!(table.value(0), tr.eval(&[0.0, 0.0]).unwrap());
}

#[test]
fn table_file_round_trip_and_determinism() {
    let sys = harmonic_system();
    let design = ObserverDesign::from_eigenvalues(vec![c(-1.0, 1.0), c(-1.0, -1.0), c(-2.0, 0.0)], Injection::identity())
        .unwrap();
    let tr = ExactTransform::new(sys.clone(), design, 20.0, 1e-8).unwrap();
    let grid = Grid::over(&sys.domain, vec![5, 4]).unwrap();
    let mut a = tabulate(&tr, grid.clone()).unwrap();
    a.config_hash = 0xdead_beef;
    a.seed = 42;
    let mut bytes_a = Vec::new();
    a.write_to(&mut bytes_a).unwrap();
    let back = TransformTable::read_from(&mut bytes_a.as_slice()).unwrap();
    assert_eq!(back, a);

    let mut b = tabulate(&tr, grid).unwrap();
    b.config_hash = 0xdead_beef;
    b.seed = 42;
    let mut bytes_b = Vec::new();
    b.write_to(&mut bytes_b).unwrap();
    assert_eq!(bytes_a, bytes_b);

    assert!(back.check_fingerprint(tr.fingerprint()).is_ok());
    let other = ExactTransform::new(sys, ObserverDesign::real(&[-1.0, -2.0, -3.0]).unwrap(), 20.0, 1e-8).unwrap();
    assert!(matches!(back.check_fingerprint(other.fingerprint()), Err(Error::Fingerprint { .. })));

    let mut truncated = bytes_a.clone();
    truncated.truncate(bytes_a.len() - 3);
    assert!(TransformTable::read_from(&mut truncated.as_slice()).is_err());
    let mut bad = bytes_a;
    bad[0] = b'X';
    assert!(matches!(TransformTable::read_from(&mut bad.as_slice()), Err(Error::TableFormat(_))));
}

#[test]
fn pde_residual_with_oracle_and_constant() {
    let sys = harmonic_system();
    let design = ObserverDesign::real(&[-1.0, -2.0]).unwrap();
    let oracle = |x: &[f64]| -> Result<ComplexMatrix> {
        Ok(ComplexMatrix::from_fn(2, 1, |i, _| sylvester(design.eigenvalues()[i], x)))
    };
    let r = pde_residual(&sys.base, &sys.domain, &design, oracle, &[0.3, -0.4], 1e-4).unwrap();
    assert!(frobenius(&r) <= 1e-3, "{}", frobenius(&r));

    let cs = constant_system();
    let cd = ObserverDesign::real(&[-2.0]).unwrap();
    let exact = |x: &[f64]| -> Result<ComplexMatrix> { Ok(ComplexMatrix::from_element(1, 1, c(x[0] / 2.0, 0.0))) };
    let r = pde_residual(&cs.base, &cs.domain, &cd, exact, &[1.3], 1e-4).unwrap();
    assert!(frobenius(&r) <= 1e-14);
}

#[test]
fn pde_residual_of_computed_transform() {
    let sys = harmonic_system();
    let design = ObserverDesign::real(&[-1.0, -2.0, -3.0]).unwrap();
    let tr = ExactTransform::with_auto_horizon(sys.clone(), design.clone(), 1e-8, 1e-8).unwrap();
    let r = pde_residual(&sys.base, &sys.domain, &design, |x| tr.eval(x), &[0.2, 0.5], 1e-4).unwrap();
    assert!(frobenius(&r) <= 1e-3, "{}", frobenius(&r));
}

#[test]
fn pde_residual_flow_exit() {
    let sys = harmonic_system();
    let design = ObserverDesign::real(&[-1.0]).unwrap();
    let r = pde_residual(&sys.base, &sys.domain, &design, |x| tr_zero(x), &[1.0, 1.0], 0.1);
    assert!(matches!(r, Err(Error::FlowExit { .. })));
}

fn tr_zero(_x: &[f64]) -> Result<ComplexMatrix> {
    Ok(ComplexMatrix::zeros(1, 1))
}

#[test]
fn horizon_doubling_changes_little() {
    let sys = harmonic_system();
    let design = ObserverDesign::real(&[-1.0, -2.0]).unwrap();
    let tol = 1e-8;
    let th = select_horizon(&design, amplitude_bound(&sys, &design, 41), tol);
    let grid = Grid::over(&sys.domain, vec![5, 5]).unwrap();
    for idx in 0..grid.num_nodes() {
        let x = grid.node(idx);
        let a = eval_t(&sys, &design, &x, th, 1e-11).unwrap();
        let b = eval_t(&sys, &design, &x, 2.0 * th, 1e-11).unwrap();
        assert!(frobenius(&(a - b)) <= tol, "node {idx}");
    }
}

/// Co-integrating the filter `ż = Az + B(h(x))` from `z(0) = T(x)` tracks
/// `T(X(x,t))`.
#[test]
fn flow_identity_by_forward_filter() {
    let vdp = benchmark(&BenchmarkSpec::VanDerPol { mu: 1.0 }).unwrap();
    let domain = DomainSpec::boxed(&[-3.0, -3.0], &[3.0, 3.0]).unwrap();
    let sys = SaturatedSystem::new(vdp, domain).unwrap();
    let design = ObserverDesign::real(&[-1.5, -2.5, -3.5]).unwrap();
    let tr = ExactTransform::with_auto_horizon(sys.clone(), design.clone(), 1e-10, 1e-10).unwrap();
    let x0 = [0.8, 0.4];
    let z0 = tr.eval(&x0).unwrap();
    let m = design.m();
    let lambdas = design.eigenvalues().to_vec();
    let mut init = x0.to_vec();
    for i in 0..m {
        init.push(z0[(i, 0)].re);
        init.push(z0[(i, 0)].im);
    }
    let t_end = 1.5;
    let tr_fw = integrate(
        |_, s, d| {
            sys.base.drift(&s[..2], &mut d[..2]);
            for i in 0..m {
                let z = c(s[2 + 2 * i], s[3 + 2 * i]);
                let dz = lambdas[i] * z + s[0];
                d[2 + 2 * i] = dz.re;
                d[3 + 2 * i] = dz.im;
            }
        },
        &init,
        0.0,
        t_end,
        &OdeOptions::with_tol(1e-11),
    );
    let end = tr_fw.last();
    let direct = tr.eval(&end[..2]).unwrap();
    for i in 0..m {
        let z = c(end[2 + 2 * i], end[3 + 2 * i]);
        assert!((z - direct[(i, 0)]).norm() < 1e-7, "row {i}: {z} vs {}", direct[(i, 0)]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn linear_plant_gives_linear_transform(
        a in -0.5f64..0.5, b in -0.5f64..0.5, u in -0.5f64..0.5, v in -0.5f64..0.5,
        alpha in -1.0f64..1.0, beta in -1.0f64..1.0,
    ) {
        let sys = harmonic_system();
        let design = ObserverDesign::from_eigenvalues(vec![c(-1.0, 0.5), c(-2.0, 0.0)], Injection::identity()).unwrap();
        let tol = 1e-9;
        let tr = ExactTransform::with_auto_horizon(sys, design, tol, 1e-11).unwrap();
        let x1 = [a, b];
        let x2 = [u, v];
        let mix = [alpha * a + beta * u, alpha * b + beta * v];
        prop_assume!(mix.iter().all(|c| c.abs() <= 1.0));
        let lhs = tr.eval(&mix).unwrap();
        let rhs = tr.eval(&x1).unwrap() * c(alpha, 0.0) + tr.eval(&x2).unwrap() * c(beta, 0.0);
        prop_assert!(frobenius(&(lhs - rhs)) <= 2.0 * tol * (1.0 + alpha.abs() + beta.abs()));
    }

    #[test]
    fn table_bytes_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 12)) {
        let sys = harmonic_system();
        let tr = ExactTransform::new(sys.clone(), ObserverDesign::real(&[-1.0, -2.0]).unwrap(), 5.0, 1e-6).unwrap();
        let mut table = tabulate(&tr, Grid::over(&sys.domain, vec![3, 1]).unwrap()).unwrap();
        for (k, v) in table.values.iter_mut().enumerate() {
            *v = c(values[2 * k], values[2 * k + 1]);
        }
        let mut bytes = Vec::new();
        table.write_to(&mut bytes).unwrap();
        let back = TransformTable::read_from(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(back, table);
    }
}
