use super::*;
use crate::design::Injection;
use crate::model::{benchmark, BenchmarkSpec, Region};
use crate::numerics::ComplexMatrix;
use proptest::prelude::*;
use rand::Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn model(spec: BenchmarkSpec) -> SystemModel {
    benchmark(&spec).unwrap()
}

fn square(r: f64) -> DomainSpec {
    DomainSpec::boxed(&[-r, -r], &[r, r]).unwrap()
}

fn assert_matrix(actual: &ComplexMatrix, expected: &[Complex64], tol: f64) {
    assert_eq!(actual.len(), expected.len());
    for (r, e) in expected.iter().enumerate() {
        assert!((actual[(r, 0)] - e).norm() <= tol, "row {r}: {} vs {e}", actual[(r, 0)]);
    }
}

#[test]
fn bundle_examples() {
    let chain = model(BenchmarkSpec::IntegratorChain { order: 2 });
    let b = lie_bundle(&chain, &square(1.0), &Injection::identity(), 2, &[0.3, -0.7], 1e-3).unwrap();
    assert_eq!(b.h.as_slice(), &[0.3, -0.7]);
    assert_eq!(b.top, vec![0.0]);

    let harm = model(BenchmarkSpec::Harmonic);
    let b = lie_bundle(&harm, &square(1.0), &Injection::identity(), 2, &[1.0, 0.0], 1e-3).unwrap();
    assert_eq!(b.h.as_slice(), &[1.0, 0.0]);
    assert_eq!(b.top, vec![-1.0]);

    let duff = model(BenchmarkSpec::Duffing);
    let b = lie_bundle(&duff, &square(2.0), &Injection::identity(), 2, &[2.0, 0.0], 1e-3).unwrap();
    assert_eq!(b.h.as_slice(), &[2.0, 0.0]);
    assert_eq!(b.top, vec![-6.0]);
}

#[test]
fn finite_difference_bundle_matches_closed_form() {
    let vdp = model(BenchmarkSpec::VanDerPol { mu: 1.0 });
    let domain = square(3.0);
    let id = Injection::identity();
    for x in [[0.5, -0.3], [1.2, 0.8], [-2.0, 1.5]] {
        for order in 0..=3 {
            let exact = vdp.lie_derivative(order, &x).unwrap()[0];
            let fd = lie_derivative_fd(&vdp, &domain, &id, order, &x, 1e-3).unwrap()[0];
            let tol = [1e-12, 1e-8, 1e-6, 1e-4][order] * (1.0 + exact.abs());
            assert!((fd - exact).abs() <= tol, "order {order} at {x:?}: {fd} vs {exact}");
        }
    }
    // with b = atan, L_f atan(x1) = x2/(1 + x1²) for the harmonic oscillator
    let harm = model(BenchmarkSpec::Harmonic);
    let b = lie_bundle(&harm, &square(1.0), &Injection::atan(), 2, &[0.5, 0.4], 1e-3).unwrap();
    assert!((b.h[(0, 0)] - 0.5f64.atan()).abs() < 1e-14);
    assert!((b.h[(1, 0)] - 0.4 / 1.25).abs() < 1e-8);
}

#[test]
fn fd_stencil_leaving_collar_fails() {
    let esc = model(BenchmarkSpec::Escape1d);
    let domain = DomainSpec::new(
        Region::Box { lower: vec![-1.0], upper: vec![1.0] },
        crate::model::Margins { upsilon: 1e-4, distinguish: 2e-4, cutoff: 3e-4 },
    )
    .unwrap();
    let r = lie_derivative_fd(&esc, &domain, &Injection::atan(), 2, &[1.0], 1e-1);
    assert!(matches!(r, Err(Error::FlowExit { .. })));
}

#[test]
fn ta_examples() {
    let chain = model(BenchmarkSpec::IntegratorChain { order: 2 });
    let design = ObserverDesign::real(&[-1.0, -2.0]).unwrap();
    let x = [0.6, -0.4];
    let b = lie_bundle(&chain, &square(1.0), &Injection::identity(), 2, &x, 1e-3).unwrap();
    let t1 = build_ta(&design, 1.0, &b).unwrap();
    assert_matrix(&t1, &[c(x[0] - x[1], 0.0), c(0.5 * x[0] - 0.25 * x[1], 0.0)], 1e-15);
    let t2 = build_ta(&design, 2.0, &b).unwrap();
    assert_matrix(&t2, &[c(x[0] / 2.0 - x[1] / 4.0, 0.0), c(x[0] / 4.0 - x[1] / 16.0, 0.0)], 1e-15);

    let zero = lie_bundle(&chain, &square(1.0), &Injection::identity(), 2, &[0.0, 0.0], 1e-3).unwrap();
    assert!(build_ta(&design, 3.0, &zero).unwrap().iter().all(|v| *v == c(0.0, 0.0)));
}

#[test]
fn approx_error_examples() {
    let design = ObserverDesign::real(&[-1.0, -2.0]).unwrap();
    let harm = model(BenchmarkSpec::Harmonic);
    let b = lie_bundle(&harm, &square(1.0), &Injection::identity(), 2, &[1.0, 0.0], 1e-3).unwrap();
    assert_matrix(&approx_error(&design, 1.0, &b), &[c(1.0, 0.0), c(0.25, 0.0)], 1e-15);

    let duff = model(BenchmarkSpec::Duffing);
    let b = lie_bundle(&duff, &square(2.0), &Injection::identity(), 2, &[2.0, 0.0], 1e-3).unwrap();
    assert_matrix(&approx_error(&design, 1.0, &b), &[c(6.0, 0.0), c(1.5, 0.0)], 1e-15);

    let chain = model(BenchmarkSpec::IntegratorChain { order: 3 });
    let d3 = ObserverDesign::real(&[-1.0, -2.0, -3.0]).unwrap();
    let b = lie_bundle(&chain, &DomainSpec::boxed(&[-1.0; 3], &[1.0; 3]).unwrap(), &Injection::identity(), 3, &[0.2, 0.5, -0.9], 1e-3)
        .unwrap();
    assert!(approx_error(&d3, 5.0, &b).iter().all(|v| *v == c(0.0, 0.0)));
}

/// `SK⁻¹·L_f H − kA·SK⁻¹·H + B_1m b(h) − (kA)^{−m} B_1m L_f^m b(h) = 0`, with
/// `L_f H` differenced along the flow.
#[test]
fn exactness_identity_on_grid() {
    let duff = model(BenchmarkSpec::Duffing);
    let domain = square(2.0);
    let eig = vec![c(-1.0, 0.5), c(-2.0, 0.0), c(-1.5, -1.0)];
    let design = ObserverDesign::from_eigenvalues(eig.clone(), Injection::identity()).unwrap();
    let id = Injection::identity();
    for k in [1.0, 4.0] {
        let g = gain_matrices(&eig, k).unwrap();
        let k_inv = ComplexMatrix::from_fn(3, 3, |i, j| if i == j { g.k[(i, i)].inv() } else { c(0.0, 0.0) });
        let sk = &g.s * k_inv;
        let ka = crate::numerics::diag(&design.scaled_eigenvalues(k));
        let grid = Grid::over(&domain, vec![7, 7]).unwrap();
        for idx in 0..grid.num_nodes() {
            let x = grid.node(idx);
            let b = lie_bundle(&duff, &domain, &id, 3, &x, 1e-3).unwrap();
            // L_f H: rows L_f^1 … L_f^m, finite-differenced in time
            let lf_h = ComplexMatrix::from_fn(3, 1, |i, _| {
                c(lie_derivative_fd(&duff, &domain, &id, i + 1, &x, 1e-3).unwrap()[0], 0.0)
            });
            let h = b.h.map(|v| c(v, 0.0));
            let bb = ComplexMatrix::from_element(3, 1, c(x[0], 0.0));
            let top = ComplexMatrix::from_fn(3, 1, |i, _| (eig[i] * k).powi(-3) * b.top[0]);
            let lhs = &sk * lf_h - &ka * &sk * h + bb - top;
            let scale = 1.0 + b.top[0].abs();
            assert!(frobenius(&lhs) <= 1e-3 * scale, "k={k} x={x:?}: {}", frobenius(&lhs));
        }
    }
}

#[test]
fn closed_form_error_matches_definition() {
    let duff = model(BenchmarkSpec::Duffing);
    let design = ObserverDesign::real(&[-1.0, -2.0]).unwrap();
    let ta = HighGainTransform::new(duff, square(2.0), design, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let x = [rng.random_range(-1.8..1.8), rng.random_range(-1.8..1.8)];
        let closed = ta.error(&x).unwrap();
        let fd = approx_error_fd(&ta, &x, 1e-4).unwrap();
        assert!(frobenius(&(closed.clone() - fd.clone())) <= 1e-6, "{x:?}: {closed} vs {fd}");
    }
}

#[test]
fn certificate_integrator_chain() {
    let chain = model(BenchmarkSpec::IntegratorChain { order: 3 });
    let domain = DomainSpec::boxed(&[-1.0; 3], &[1.0; 3]).unwrap();
    let design = ObserverDesign::real(&[-1.0, -2.0, -3.0]).unwrap();
    let grid = Grid::over(&domain, vec![5, 5, 5]).unwrap();
    let cert = certify_gain(&chain, &domain, &design, &grid, &default_k_ladder(), 0).unwrap();
    assert!(cert.satisfied);
    assert_eq!(cert.k, 1.0);
    assert_eq!(cert.n, 0.0);
    assert_eq!(cert.constants.l_empirical, 0.0);
    assert_eq!(cert.n_empirical, 0.0);
    assert_eq!(cert.epsilon, Some(1.0 / cert.lambda_max));
    assert!(cert.to_json().unwrap().contains("\"satisfied\": true"));
}

#[test]
fn certificate_duffing() {
    let duff = model(BenchmarkSpec::Duffing);
    let domain = square(2.0);
    let design = ObserverDesign::real(&[-1.0, -2.0]).unwrap();
    let grid = Grid::over(&domain, vec![21, 21]).unwrap();
    let cert = certify_gain(&duff, &domain, &design, &grid, &default_k_ladder(), 0).unwrap();
    assert!(cert.constants.l_empirical <= 11.0 + 1e-12);
    assert!(cert.constants.l_empirical > 5.0);
    assert_eq!(cert.constants.l_analytic, Some(11.0));
    // |S⁻¹| for S = [[-1, 1], [-1/2, 1/4]], S⁻¹ = [[1, -4], [2, -4]]
    let s_inv = ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(-4.0, 0.0), c(2.0, 0.0), c(-4.0, 0.0)]);
    let n = 2f64.sqrt() * 11.0 * crate::numerics::spectral_norm(&s_inv);
    assert!((cert.n - n).abs() <= 1e-9 * n);
    assert!((cert.k_required - n).abs() <= 1e-9 * n);
    let expected_k = default_k_ladder().into_iter().find(|k| n / k < 1.0).unwrap();
    assert_eq!(cert.k, expected_k);
    assert!(cert.satisfied);
    assert!(cert.n_empirical <= cert.n);
    let eps = cert.epsilon.unwrap();
    assert!((eps - (1.0 - 2.0 * cert.n * cert.lambda_max) / cert.lambda_max).abs() < 1e-12);

    // N does not depend on the gain
    let constants = gain_constants(&duff, &domain, &design, &grid, 0).unwrap();
    let a = cert_at(&duff, &domain, &design, &grid, constants.clone(), 3.0, 0).unwrap();
    let b = cert_at(&duff, &domain, &design, &grid, constants, 300.0, 0).unwrap();
    assert_eq!(a.n, b.n);
    assert!(!a.satisfied && b.satisfied);

    assert!(matches!(
        certify_gain(&duff, &domain, &design, &grid, &[1.0, 2.0, 4.0], 0),
        Err(Error::NoCertifiedGain { k_required }) if (k_required - n).abs() < 1e-9 * n
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn two_forms_of_ta_agree(
        re in proptest::collection::vec(-5.0f64..-0.2, 3),
        im in proptest::collection::vec(-3.0f64..3.0, 3),
        h in proptest::collection::vec(-10.0f64..10.0, 3),
        k in 1.0f64..50.0,
    ) {
        let eig: Vec<_> = re.iter().zip(&im).map(|(r, i)| c(*r, *i)).collect();
        let mut distinct = true;
        for i in 0..3 { for j in i + 1..3 { distinct &= (eig[i] - eig[j]).norm() > 1e-2; } }
        prop_assume!(distinct);
        let design = ObserverDesign::from_eigenvalues(eig, Injection::identity()).unwrap();
        let bundle = LieBundle { h: DMatrix::from_column_slice(3, 1, &h), top: vec![0.0] };
        let a = build_ta(&design, k, &bundle).unwrap();
        let b = build_ta_series(&design, k, &bundle);
        prop_assert!(frobenius(&(a.clone() - b)) <= 1e-12 * (1.0 + frobenius(&a)));
    }
}
