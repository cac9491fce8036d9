#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, Matrix2};
use thermolab::analysis::*;
use thermolab::cocycle::{generator_at, integrate_cocycle};
use thermolab::cs::{l_domination_test, validate_cs, PeriodicLinearSystem, SplitSpec};
use thermolab::geometry::{closedness_residual, regression_suite, sample_form, TrigPoly, TrigTerm};
use thermolab::flow::integrate_orbit;
use thermolab::{ClosedFormField, OrbitOptions, Scenario, UnitTangentState};

fn along_x(scenario: &Scenario, y: f64) -> UnitTangentState {
    UnitTangentState::from_angle(&scenario.metric, [0.0, y], 0.0)
}

#[test]
fn lyapunov_flat_is_zero() {
    let s = Scenario::flat();
    let r = lyapunov_spectrum(&s, &along_x(&s, 0.3), 1e4, 0.01, LYAPUNOV_WINDOW).unwrap();
    assert!(r.exponents.iter().all(|l| l.abs() <= 1e-3), "{:?}", r.exponents);
    assert_eq!(r.b, 0.0);
    assert!(r.pairing_residual <= 1e-3);
}

#[test]
fn lyapunov_attractor_matches_linearization() {
    let e = 0.5;
    let s = Scenario::product_torus(e);
    let r = lyapunov_spectrum(&s, &along_x(&s, 0.0), 1e4, 0.01, LYAPUNOV_WINDOW).unwrap();
    assert!((r.exponents[0] + e).abs() <= 1e-2, "{:?}", r.exponents);
    assert!(r.exponents[1].abs() <= 1e-2, "{:?}", r.exponents);
    assert!((r.b + e).abs() <= 1e-9);
}

#[test]
fn lyapunov_rejects_short_horizon() {
    let s = Scenario::flat();
    assert!(matches!(
        lyapunov_spectrum(&s, &along_x(&s, 0.0), 5.0, 0.01, LYAPUNOV_WINDOW),
        Err(AnalysisError::InvalidHorizon { .. })
    ));
}

#[test]
fn lyapunov_pairing_on_regression_suite() {
    for (i, s) in regression_suite().iter().enumerate() {
        let start = UnitTangentState::from_angle(&s.metric, [0.1, 0.2], 0.3);
        let r = lyapunov_spectrum(s, &start, 1e4, 0.01, LYAPUNOV_WINDOW).unwrap();
        assert!(r.pairing_residual <= 1e-3, "scenario {i}: {r:?}");
    }
}

fn x_section() -> Section {
    Section::new(SectionAxis::X, 0.0)
}

#[test]
fn flat_closed_geodesic() {
    let s = Scenario::flat();
    let orbit = find_periodic(&s, &along_x(&s, 0.3), &x_section(), &PeriodicOptions::new(1e-3)).unwrap();
    assert!((orbit.period - 1.0).abs() < 1e-12);
    assert!(orbit.residual <= 1e-10);
    let expect = [[1.0, 1.0], [0.0, 1.0]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((orbit.return_matrix[i][j] - expect[i][j]).abs() < 1e-10);
        }
    }
    assert_eq!(orbit.beta.beta, 0.0);
    assert_eq!(orbit.winding, [1, 0]);
    let c = classify_periodic(&orbit.return_derivative).unwrap();
    assert_eq!(c.kind, PeriodicKind::NonHyperbolic);
}

#[test]
fn attractor_circle() {
    let e = 0.5;
    let s = Scenario::product_torus(e);
    let orbit = find_periodic(&s, &along_x(&s, 0.7), &x_section(), &PeriodicOptions::new(1e-3)).unwrap();
    assert!((orbit.period - 1.0).abs() < 1e-12);
    assert!((orbit.beta.beta - e).abs() < 1e-12);
    assert!((orbit.beta.cohomological - e).abs() < 1e-15);
    let c = classify_periodic(&orbit.return_derivative).unwrap();
    assert_eq!(c.kind, PeriodicKind::NonHyperbolic);
    assert_eq!((c.contracting, c.neutral), (1, 1));
    let mut moduli = c.moduli.clone();
    moduli.sort_by(f64::total_cmp);
    assert!((moduli[0] - (-e).exp()).abs() < 1e-9);
    assert!((moduli[1] - 1.0).abs() < 1e-9);
}

#[test]
fn saddle_newton_converges_quadratically() {
    let s = Scenario::curved_saddle(-0.1, 0.2);
    let seed = UnitTangentState::from_angle(&s.metric, [0.0, 0.01], 0.01);
    let orbit = find_periodic(&s, &seed, &x_section(), &PeriodicOptions::new(1e-3)).unwrap();
    assert!(orbit.residual <= 1e-10, "{:?}", orbit.residual_history);
    assert!(orbit.seed.p[1].abs() < 1e-9 && orbit.seed.v[1].abs() < 1e-9, "{:?} {:?}", orbit.seed, orbit.residual_history);
    let h = &orbit.residual_history;
    assert!(h.len() >= 3, "{h:?}");
    let ratios: Vec<f64> = h.windows(2).map(|w| w[1] / w[0]).collect();
    for w in ratios.windows(2) {
        assert!(w[1] < w[0], "ratios {ratios:?}");
    }
    assert!((orbit.period - (-0.1f64).exp()).abs() < 1e-10);
    assert!((orbit.beta.beta - 0.2).abs() < 1e-9);

    let c = classify_periodic(&orbit.return_derivative).unwrap();
    assert_eq!(c.kind, PeriodicKind::Saddle);
    assert!((c.log_product - orbit.s_period).abs() <= 1e-6);
    assert!((orbit.mu - orbit.s_period.exp()).abs() <= 1e-6);
}

#[test]
fn beta_ignores_exact_part() {
    let s = Scenario::curved_saddle(-0.3, 0.2);
    let orbit = find_periodic(&s, &along_x(&s, 0.0), &x_section(), &PeriodicOptions::new(1e-3)).unwrap();
    for k in 0..10 {
        let amp = 0.05 * (k as f64 + 1.0);
        let u = TrigPoly::new(vec![TrigTerm::cos(1, k % 3, amp), TrigTerm::sin(k % 2, 1, -0.5 * amp)]);
        let field = ClosedFormField::harmonic(0.2, 0.0).with_potential(u);
        let b = beta_of_orbit(&s.with_field(field), &orbit.orbit, 1e-6).unwrap();
        assert!((b.beta - orbit.beta.beta).abs() <= 1e-8, "{k}: {} vs {}", b.beta, orbit.beta.beta);
    }
}

#[test]
fn beta_rejects_open_curve() {
    let s = Scenario::product_torus(0.5);
    let orbit = integrate_orbit(&s, &along_x(&s, 0.0), 0.5, OrbitOptions::new(1e-3)).unwrap();
    assert!(matches!(beta_of_orbit(&s, &orbit, 1e-6), Err(AnalysisError::NotClosed { .. })));
}

#[test]
fn surgery_on_attractor() {
    let e = 0.5;
    let alpha = 0.2;
    let s = Scenario::product_torus(e);
    let opts = PeriodicOptions::new(1e-3);
    let orbit = find_periodic(&s, &along_x(&s, 0.0), &x_section(), &opts).unwrap();
    let r = surgery_on_orbit(&s, &orbit, &x_section(), alpha, &opts).unwrap();
    assert!((r.field.c[0] - (e + alpha)).abs() < 1e-15);
    assert!((r.beta_same_curve - r.beta_before - alpha).abs() <= 1e-8);
    assert!(((r.log_det_after - r.log_det_before).abs() - alpha).abs() <= 1e-3);
    let grid = sample_form(|p| r.field.gamma(p), 50, 1e-3);
    assert!(closedness_residual(&grid, 1e-3) <= 1e-5);
}

#[test]
fn surgery_on_saddle() {
    let alpha = 0.1;
    let s = Scenario::curved_saddle(-0.3, 0.2);
    let opts = PeriodicOptions::new(1e-3);
    let orbit = find_periodic(&s, &along_x(&s, 0.0), &x_section(), &opts).unwrap();
    let r = surgery_on_orbit(&s, &orbit, &x_section(), alpha, &opts).unwrap();
    assert!((r.beta_same_curve - r.beta_before - alpha).abs() <= 1e-8);
    assert!(((r.log_det_after - r.log_det_before).abs() - alpha).abs() <= 1e-3);
}

#[test]
fn cone_flat_is_invariant() {
    let s = Scenario::flat();
    let orbit = integrate_orbit(&s, &along_x(&s, 0.0), 1.0, OrbitOptions::new(1e-3)).unwrap();
    let r = cone_invariance_test(&s, &orbit, 0.1, 50).unwrap();
    assert_eq!(r.verdict, ConeVerdict::Invariant);
    assert!(r.min_margin > 0.0);
    assert!(r.q_nonnegative);
}

#[test]
fn cone_attractor_hand_margin() {
    let e = 0.5;
    let s = Scenario::product_torus(e);
    let orbit = integrate_orbit(&s, &along_x(&s, 0.0), 1.0, OrbitOptions::new(1e-3)).unwrap();
    for k in [0.05f64, 0.2, 0.45] {
        let psi = 0.5 * (2.0 * k).asin();
        let hand = psi.sin().powi(2) - e * k;
        let r = cone_invariance_test(&s, &orbit, k, 40).unwrap();
        assert!((r.min_margin - hand).abs() < 1e-12, "k = {k}");
        let expect = if hand > 0.0 { ConeVerdict::Invariant } else { ConeVerdict::Violated };
        assert_eq!(r.verdict, expect);
        assert!(r.gamma_positive);
    }
}

#[test]
fn cone_margin_matches_cocycle_differences() {
    let s = &regression_suite()[3];
    let start = UnitTangentState::from_angle(&s.metric, [0.2, 0.6], 1.1);
    let h = 2.5e-4;
    let orbit = thermolab::flow::fermi_frame(s, &integrate_orbit(s, &start, 2.0, OrbitOptions::new(h)).unwrap()).unwrap();
    let cocycle = integrate_cocycle(s, &orbit).unwrap();
    let xi0 = [0.8f64.cos(), 0.8f64.sin()];
    let cone = |i: usize| {
        let t = cocycle.matrices[i];
        let xi = t * nalgebra::Vector2::new(xi0[0], xi0[1]);
        (cone_function([xi[0], xi[1]]), [xi[0], xi[1]])
    };
    let mut worst: f64 = 0.0;
    for i in (1..orbit.len() - 1).step_by(397) {
        let fd = (cone(i + 1).0 - cone(i - 1).0) / (2.0 * h);
        let g = generator_at(s, &orbit.states[i]);
        let formula = cone_derivative(&g, cone(i).1);
        worst = worst.max((fd - formula).abs() / formula.abs().max(1.0));
    }
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn cone_verdict_stable_under_refinement() {
    for s in regression_suite().iter().take(4) {
        let start = UnitTangentState::from_angle(&s.metric, [0.0, 0.0], 0.4);
        let orbit = integrate_orbit(s, &start, 3.0, OrbitOptions::new(1e-3)).unwrap();
        for k in [0.1, 0.3] {
            let coarse = cone_invariance_test(s, &orbit, k, 101).unwrap();
            let fine = cone_invariance_test(s, &orbit, k, 201).unwrap();
            assert_eq!(coarse.verdict, fine.verdict);
            let change = (fine.min_margin - coarse.min_margin).abs() / coarse.min_margin.abs();
            assert!(change <= 0.1, "{change}");
        }
    }
}

#[test]
fn domination_attractor() {
    let s = Scenario::product_torus(0.5);
    let est = domination_estimator(&s, &along_x(&s, 0.0), 5, DOMINATION_WINDOW, 1e-3).unwrap();
    assert_eq!(est.l, Some(2), "{est:?}");
    assert!((est.worst_ratio - (-1.0f64).exp()).abs() < 1e-4, "{}", est.worst_ratio);
    assert!(est.worst_ratio < 0.5);
}

#[test]
fn domination_flat_is_none() {
    let s = Scenario::flat();
    for l_max in [1, 5, 10] {
        let est = domination_estimator(&s, &along_x(&s, 0.0), l_max, DOMINATION_WINDOW, 1e-3).unwrap();
        assert_eq!(est.l, None);
        assert!(est.diagnostic.is_some());
    }
}

#[test]
fn domination_constant_generator() {
    let letters = generator_letters(|_| Matrix2::new(0.69, 0.0, 0.0, -0.69), 100, 1e-3);
    let est = domination_from_letters(&letters, 4, DOMINATION_WINDOW).unwrap();
    assert_eq!(est.l, Some(1));
    assert!((est.worst_ratio - (-1.38f64).exp()).abs() < 1e-9);
}

#[test]
fn domination_agrees_with_linear_system() {
    let e = 0.5f64;
    let s = Scenario::product_torus(e);
    let letters = cocycle_letters(&s, &along_x(&s, 0.0), 100, 1e-3).unwrap();
    let est = domination_from_letters(&letters, 5, DOMINATION_WINDOW).unwrap();

    let m = letters[0];
    let cs = validate_cs(&DMatrix::from_row_slice(2, 2, m.as_slice()).transpose(), 1e-9).unwrap();
    let system = PeriodicLinearSystem::cycle(vec![cs]).unwrap();
    let mu = m.determinant();
    let f = DMatrix::from_column_slice(2, 1, &[m[(0, 1)], mu - 1.0]);
    let g = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    let split = SplitSpec::constant(f, g, 1);
    let linear = (1..=5).find(|&l| l_domination_test(&system, &split, l).unwrap().dominated);
    assert_eq!(est.l, linear);
}
