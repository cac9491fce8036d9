use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};
use thermolab::flow::*;
use thermolab::geometry::{gauss_curvature, regression_suite, ChartPoint, ConformalMetric, TrigPoly, TrigTerm};
use thermolab::{OrbitOptions, Scenario, UnitTangentState};

#[test]
fn energy_is_conserved_on_product_torus() {
    let s = Scenario::product_torus(1.0);
    let st = UnitTangentState::from_angle(&s.metric, [0.0, 0.0], 2.0);
    let orbit = integrate_orbit(&s, &st, 100.0, OrbitOptions::new(1e-3)).unwrap();
    assert!(orbit.max_drift <= 1e-8, "{:e}", orbit.max_drift);
    assert!(!orbit.renormalized);
}

#[test]
fn energy_is_conserved_on_regression_suite() {
    for (k, s) in regression_suite().iter().enumerate() {
        let st = UnitTangentState::from_angle(&s.metric, [0.3, 0.1], 0.5 * k as f64);
        let orbit = integrate_orbit(s, &st, 100.0, OrbitOptions::new(1e-3).record_every(1000)).unwrap();
        assert!(orbit.max_drift <= 1e-8, "scenario {k}: {:e}", orbit.max_drift);
    }
}

#[test]
fn fiber_coordinate_follows_tanh() {
    let s = Scenario::product_torus(1.0);
    let v0 = (-5.0f64).tanh();
    let st = UnitTangentState { p: [0.0, 0.0], v: [v0, (1.0 - v0 * v0).sqrt()] };
    let orbit = integrate_orbit(&s, &st, 10.0, OrbitOptions::new(1e-3)).unwrap();
    let worst = orbit
        .times
        .iter()
        .zip(&orbit.states)
        .map(|(t, x)| (x.v[0] - (t - 5.0).tanh()).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn product_torus_attracts() {
    let s = Scenario::product_torus(1.0);
    for sign in [1.0, -1.0] {
        let st = UnitTangentState { p: [0.2, 0.4], v: [-0.9, sign * (1.0f64 - 0.81).sqrt()] };
        let orbit = integrate_orbit(&s, &st, 50.0, OrbitOptions::new(1e-3).record_every(1000)).unwrap();
        assert!(orbit.end().v[0] >= 1.0 - 1e-8, "{}", orbit.end().v[0]);
    }
}

#[test]
fn flow_is_reversible() {
    for (k, s) in regression_suite().iter().enumerate() {
        let st = UnitTangentState::from_angle(&s.metric, [0.6, 0.2], 1.0 + k as f64);
        let fwd = integrate_orbit(s, &st, 10.0, OrbitOptions::new(1e-3).record_every(10_000)).unwrap();
        let back = integrate_orbit(s, fwd.end(), -10.0, OrbitOptions::new(1e-3).record_every(10_000)).unwrap();
        let end = back.end();
        let err = (0..2).map(|i| (end.p[i] - st.p[i]).abs().max((end.v[i] - st.v[i]).abs())).fold(0.0, f64::max);
        assert!(err <= 1e-6, "scenario {k}: {err:e}");
    }
}

#[test]
fn rk4_is_fourth_order() {
    let s = &regression_suite()[4];
    let st = UnitTangentState::from_angle(&s.metric, [0.1, 0.9], 0.7);
    let end = |h: f64| *integrate_orbit(s, &st, 2.0, OrbitOptions::new(h).record_every((2.0 / h).round() as usize)).unwrap().end();
    let reference = end(1e-3);
    let err = |h: f64| {
        let x = end(h);
        (0..2).map(|i| (x.p[i] - reference.p[i]).abs().max((x.v[i] - reference.v[i]).abs())).fold(0.0, f64::max)
    };
    let ratio = err(0.04) / err(0.02);
    assert!((13.0..=19.0).contains(&ratio), "{ratio}");
}

#[test]
fn thermostat_force_is_orthogonal_to_velocity() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for s in regression_suite() {
        for _ in 0..100 {
            let p = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let st = UnitTangentState::from_angle(&s.metric, p, rng.random_range(0.0..TAU));
            let a = covariant_acceleration(&s, &st);
            assert!(s.metric.inner(p, a, st.v).abs() <= 1e-12);
        }
    }
}

#[test]
fn frames_are_orthonormal() {
    for s in regression_suite() {
        let st = UnitTangentState::from_angle(&s.metric, [0.0, 0.5], 0.3);
        let orbit = fermi_frame(&s, &integrate_orbit(&s, &st, 5.0, OrbitOptions::new(1e-3)).unwrap()).unwrap();
        for (x, e) in orbit.states.iter().zip(&orbit.frames) {
            assert!(s.metric.inner(x.p, *e, x.v).abs() <= 1e-8);
            assert!((s.metric.norm(x.p, *e) - 1.0).abs() <= 1e-8);
        }
    }
}

#[test]
fn flat_transport_is_constant() {
    let s = Scenario::flat();
    let st = UnitTangentState::from_angle(&s.metric, [0.0, 0.0], 0.9);
    let orbit = fermi_frame(&s, &integrate_orbit(&s, &st, 3.0, OrbitOptions::new(1e-2)).unwrap()).unwrap();
    let transport = orbit.transport.unwrap();
    for w in &transport.parallel {
        assert!((w[0] - st.normal()[0]).abs() < 1e-14 && (w[1] - st.normal()[1]).abs() < 1e-14);
    }
}

/// `∬ K dA` over the g-disk image of a chart disk, by tensor Gauss–Legendre
/// quadrature in polar coordinates.
fn curvature_integral(metric: &ConformalMetric, c: [f64; 2], r: f64) -> f64 {
    let (nodes, weights) = gauss_legendre(24);
    let mut acc = 0.0;
    for (a, wa) in nodes.iter().zip(&weights) {
        let rho = 0.5 * r * (a + 1.0);
        for (b, wb) in nodes.iter().zip(&weights) {
            let phi = PI * (b + 1.0);
            let p = [c[0] + rho * phi.cos(), c[1] + rho * phi.sin()];
            let k = gauss_curvature(metric, ChartPoint::new(p[0], p[1]));
            acc += wa * wb * k * metric.factor(p) * rho;
        }
    }
    acc * 0.5 * r * PI
}

/// Nodes and weights on [−1, 1] by Newton iteration on Legendre polynomials.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

#[test]
fn holonomy_matches_enclosed_curvature() {
    let metric = ConformalMetric::conformal(TrigPoly::new(vec![
        TrigTerm::cos(1, 0, 0.2),
        TrigTerm::sin(0, 1, -0.15),
        TrigTerm::cos(1, 1, 0.1),
    ]));
    for (c, r) in [([0.3, 0.4], 0.05), ([0.7, 0.1], 0.1)] {
        let curve = |t: f64| ([c[0] + r * t.cos(), c[1] + r * t.sin()], [-r * t.sin(), r * t.cos()]);
        let w0 = [1.0 / metric.factor(curve(0.0).0).sqrt(), 0.0];
        let w1 = parallel_transport(&metric, curve, 0.0, TAU, 4000, w0);
        let angle = (w0[0] * w1[1] - w0[1] * w1[0]).atan2(w0[0] * w1[0] + w0[1] * w1[1]);
        let total = curvature_integral(&metric, c, r);
        assert!(total.abs() > 1e-2);
        // counter-clockwise loop: the transported vector turns by +∬K dA,
        // i.e. the initial vector sits at −∬K dA from the transported one
        assert!((angle - total).abs() <= 1e-4, "angle {angle}, curvature {total}");
    }
}
