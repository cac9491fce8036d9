//! Gaussian thermostat flow on the unit tangent bundle of a torus chart.
//!
//! The state is an unwrapped chart position `p` and a unit vector `v`. The
//! equations are `ṗ = v`, `∇_v v = E − γ(v) v`; in the chart,
//! `v̇^k = −Γ^k_{ij} v^i v^j + E^k − γ(v) v^k`.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{ChartPoint, ConformalMetric, LocalGeometry, Scenario};
use crate::numerics::{rk4_step, schedule, wrap_centered};

/// Largest energy drift tolerated before an integration is aborted.
pub const DRIFT_LIMIT: f64 = 1e-3;

/// Tolerance on `g(v, v) = 1` for initial states.
pub const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("step too large: energy drift {drift:e} exceeds {limit:e} at t = {time}")]
    StepTooLarge { drift: f64, limit: f64, time: f64 },
    #[error("integration step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("duration must be finite, got {0}")]
    InvalidDuration(f64),
    #[error("initial state is not unit: |g(v, v) - 1| = {0:e}")]
    NotUnit(f64),
    #[error("state became non-finite at t = {0}")]
    NonFinite(f64),
}

/// Point of the unit tangent bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitTangentState {
    /// Unwrapped chart coordinates.
    pub p: [f64; 2],
    pub v: [f64; 2],
}

impl UnitTangentState {
    /// State with `v = e^{-f(p)} (cos θ, sin θ)`.
    pub fn from_angle(metric: &ConformalMetric, p: [f64; 2], theta: f64) -> Self {
        let scale = 1.0 / metric.factor(p).sqrt();
        UnitTangentState { p, v: [scale * theta.cos(), scale * theta.sin()] }
    }

    /// Rescale an arbitrary non-zero `v` to unit length.
    pub fn normalized(metric: &ConformalMetric, p: [f64; 2], v: [f64; 2]) -> Self {
        let n = metric.norm(p, v);
        UnitTangentState { p, v: [v[0] / n, v[1] / n] }
    }

    pub fn chart_point(&self) -> ChartPoint {
        ChartPoint::new(self.p[0], self.p[1])
    }

    /// `g(v, v)`.
    pub fn energy(&self, metric: &ConformalMetric) -> f64 {
        metric.inner(self.p, self.v, self.v)
    }

    /// Velocity angle in the chart.
    pub fn angle(&self) -> f64 {
        self.v[1].atan2(self.v[0])
    }

    /// Unit normal `e₁`, `v` rotated by `+π/2`.
    pub fn normal(&self) -> [f64; 2] {
        [-self.v[1], self.v[0]]
    }

    pub(crate) fn to_array(self) -> [f64; 4] {
        [self.p[0], self.p[1], self.v[0], self.v[1]]
    }

    pub(crate) fn from_array(y: &[f64]) -> Self {
        UnitTangentState { p: [y[0], y[1]], v: [y[2], y[3]] }
    }
}

/// Chart acceleration `v̇` at a point with precomputed local data.
pub(crate) fn acceleration(local: &LocalGeometry, v: [f64; 2]) -> [f64; 2] {
    let gvv = local.christoffel.contract(v, v);
    let e = local.e_field();
    let gv = local.gamma_of(v);
    [-gvv[0] + e[0] - gv * v[0], -gvv[1] + e[1] - gv * v[1]]
}

pub(crate) fn flow_rhs(scenario: &Scenario, y: &[f64; 4]) -> [f64; 4] {
    let local = scenario.local([y[0], y[1]]);
    let a = acceleration(&local, [y[2], y[3]]);
    [y[2], y[3], a[0], a[1]]
}

/// Time derivative `(ṗ, v̇)` of the thermostat vector field.
pub fn thermostat_rhs(scenario: &Scenario, state: &UnitTangentState) -> ([f64; 2], [f64; 2]) {
    let local = scenario.local(state.p);
    (state.v, acceleration(&local, state.v))
}

/// Covariant acceleration `∇_v v = v̇ + Γ(v, v)`.
pub fn covariant_acceleration(scenario: &Scenario, state: &UnitTangentState) -> [f64; 2] {
    let local = scenario.local(state.p);
    let a = acceleration(&local, state.v);
    let gvv = local.christoffel.contract(state.v, state.v);
    [a[0] + gvv[0], a[1] + gvv[1]]
}

/// Integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitOptions {
    pub step: f64,
    /// Rescale `v` to unit length after every step.
    pub renormalize: bool,
    /// Keep every `record_every`-th step.
    pub record_every: usize,
}

impl OrbitOptions {
    pub fn new(step: f64) -> Self {
        OrbitOptions { step, renormalize: false, record_every: 1 }
    }

    pub fn renormalized(mut self) -> Self {
        self.renormalize = true;
        self
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k.max(1);
        self
    }
}

/// Parallel transport data attached by [`fermi_frame`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transport {
    /// Parallel field along the base curve, starting at `e₁(0)`.
    pub parallel: Vec<[f64; 2]>,
    /// Unwrapped angle from the parallel field to `e₁`.
    pub twist: Vec<f64>,
    /// Largest `|‖P‖_g − 1|`.
    pub norm_drift: f64,
}

/// Uniformly sampled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitSegment {
    pub times: Vec<f64>,
    pub states: Vec<UnitTangentState>,
    /// Unit normal `e₁ ⟂ v` per sample.
    pub frames: Vec<[f64; 2]>,
    /// `σ = −γ(v)` per sample.
    pub sigma: Vec<f64>,
    /// `g(v, v)` per sample.
    pub energy: Vec<f64>,
    /// Largest `|g(v, v) − 1|` seen at any step, before renormalization.
    pub max_drift: f64,
    /// Integrator step (signed).
    pub step: f64,
    /// Spacing of the recorded samples (signed).
    pub sample_step: f64,
    pub renormalized: bool,
    pub transport: Option<Transport>,
}

impl OrbitSegment {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn start(&self) -> &UnitTangentState {
        &self.states[0]
    }

    pub fn end(&self) -> &UnitTangentState {
        self.states.last().expect("orbit has at least one sample")
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0) - self.times[0]
    }

    /// Unwrapped displacement of the base point.
    pub fn displacement(&self) -> [f64; 2] {
        let (a, b) = (self.start().p, self.end().p);
        [b[0] - a[0], b[1] - a[1]]
    }

    /// Nearest integer displacement: the homology class of a closed orbit.
    pub fn winding(&self) -> [i64; 2] {
        let d = self.displacement();
        [d[0].round() as i64, d[1].round() as i64]
    }
}

fn validate(duration: f64, step: f64) -> Result<(), FlowError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(FlowError::InvalidStep(step));
    }
    if !duration.is_finite() {
        return Err(FlowError::InvalidDuration(duration));
    }
    Ok(())
}

/// Fixed-step RK4 integration of the thermostat flow over `duration`
/// (negative durations integrate backward).
pub fn integrate_orbit(
    scenario: &Scenario,
    state: &UnitTangentState,
    duration: f64,
    options: OrbitOptions,
) -> Result<OrbitSegment, FlowError> {
    validate(duration, options.step)?;
    let metric = &scenario.metric;
    let e0 = state.energy(metric);
    if (e0 - 1.0).abs() > UNIT_TOL {
        return Err(FlowError::NotUnit((e0 - 1.0).abs()));
    }
    let (n, h) = schedule(duration, options.step);
    let every = options.record_every.max(1);
    let mut orbit = OrbitSegment {
        times: Vec::with_capacity(n / every + 2),
        states: Vec::with_capacity(n / every + 2),
        frames: Vec::new(),
        sigma: Vec::new(),
        energy: Vec::new(),
        max_drift: (e0 - 1.0).abs(),
        step: h,
        sample_step: h * every as f64,
        renormalized: options.renormalize,
        transport: None,
    };
    let push = |orbit: &mut OrbitSegment, t: f64, s: UnitTangentState, energy: f64| {
        orbit.times.push(t);
        orbit.frames.push(s.normal());
        orbit.sigma.push(-scenario.field.apply(s.p, s.v));
        orbit.energy.push(energy);
        orbit.states.push(s);
    };
    push(&mut orbit, 0.0, *state, e0);
    let mut y = state.to_array();
    for i in 1..=n {
        y = rk4_step(&y, h, |y| flow_rhs(scenario, y));
        let t = i as f64 * h;
        if y.iter().any(|c| !c.is_finite()) {
            return Err(FlowError::NonFinite(t));
        }
        let mut s = UnitTangentState::from_array(&y);
        let mut energy = s.energy(metric);
        let drift = (energy - 1.0).abs();
        orbit.max_drift = orbit.max_drift.max(drift);
        if drift > DRIFT_LIMIT {
            return Err(FlowError::StepTooLarge { drift, limit: DRIFT_LIMIT, time: t });
        }
        if options.renormalize {
            let k = 1.0 / energy.sqrt();
            y[2] *= k;
            y[3] *= k;
            s = UnitTangentState::from_array(&y);
            energy = s.energy(metric);
        }
        // a trailing partial stride is dropped to keep the spacing uniform
        if i % every == 0 {
            push(&mut orbit, t, s, energy);
        }
    }
    Ok(orbit)
}

/// Parallel-transport ODE `ẇ^k = −Γ^k_{ij} ċ^i w^j`.
fn transport_rhs(metric: &ConformalMetric, p: [f64; 2], c_dot: [f64; 2], w: [f64; 2]) -> [f64; 2] {
    let g = metric.christoffel(p).contract(c_dot, w);
    [-g[0], -g[1]]
}

/// Attach the parallel transport of `e₁(0)` along the base curve.
///
/// The base flow is re-integrated jointly with the transported vector on the
/// same step grid, so the base samples coincide with the stored orbit. The
/// transported vector is not re-orthonormalized: its norm drift is reported.
pub fn fermi_frame(scenario: &Scenario, orbit: &OrbitSegment) -> Result<OrbitSegment, FlowError> {
    let metric = &scenario.metric;
    let h = orbit.step;
    let every = ((orbit.sample_step / orbit.step).round() as usize).max(1);
    let n = (orbit.len() - 1) * every;
    let start = orbit.start();
    let e1 = start.normal();
    let mut y = [start.p[0], start.p[1], start.v[0], start.v[1], e1[0], e1[1]];
    let mut parallel = Vec::with_capacity(orbit.len());
    let mut twist = Vec::with_capacity(orbit.len());
    let mut norm_drift: f64 = 0.0;
    let record = |y: &[f64; 6], s: &UnitTangentState, twist: &mut Vec<f64>, parallel: &mut Vec<[f64; 2]>| {
        let w = [y[4], y[5]];
        let e = s.normal();
        let c = metric.inner(s.p, w, e);
        let sn = metric.inner(s.p, [-w[1], w[0]], e);
        let raw = sn.atan2(c);
        let angle = match twist.last() {
            Some(prev) => prev + wrap_centered(raw - prev, std::f64::consts::TAU),
            None => raw,
        };
        twist.push(angle);
        parallel.push(w);
        (metric.norm(s.p, w) - 1.0).abs()
    };
    norm_drift = norm_drift.max(record(&y, start, &mut twist, &mut parallel));
    for i in 1..=n {
        y = rk4_step(&y, h, |y| {
            let base = flow_rhs(scenario, &[y[0], y[1], y[2], y[3]]);
            let w = transport_rhs(metric, [y[0], y[1]], [y[2], y[3]], [y[4], y[5]]);
            [base[0], base[1], base[2], base[3], w[0], w[1]]
        });
        if orbit.renormalized {
            let k = 1.0 / metric.norm([y[0], y[1]], [y[2], y[3]]);
            y[2] *= k;
            y[3] *= k;
        }
        if i % every == 0 {
            let s = UnitTangentState::from_array(&y[..4]);
            norm_drift = norm_drift.max(record(&y, &s, &mut twist, &mut parallel));
        }
    }
    let mut out = orbit.clone();
    out.transport = Some(Transport { parallel, twist, norm_drift });
    Ok(out)
}

/// Transport `w0` along a parametrized chart curve `t ↦ (c(t), ċ(t))` on
/// `[t0, t1]` with `steps` RK4 steps.
pub fn parallel_transport(
    metric: &ConformalMetric,
    curve: impl Fn(f64) -> ([f64; 2], [f64; 2]),
    t0: f64,
    t1: f64,
    steps: usize,
    w0: [f64; 2],
) -> [f64; 2] {
    let h = (t1 - t0) / steps as f64;
    // time is carried as a state component so the curve sees RK4 stage times
    let mut y = [w0[0], w0[1], t0];
    for _ in 0..steps {
        y = rk4_step(&y, h, |y| {
            let (c, c_dot) = curve(y[2]);
            let w = transport_rhs(metric, c, c_dot, [y[0], y[1]]);
            [w[0], w[1], 1.0]
        });
    }
    [y[0], y[1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_geodesic_is_a_straight_line() {
        let s = Scenario::flat();
        let st = UnitTangentState { p: [0.25, 0.5], v: [1.0, 0.0] };
        let (pd, vd) = thermostat_rhs(&s, &st);
        assert_eq!(pd, [1.0, 0.0]);
        assert_eq!(vd, [0.0, 0.0]);
        let orbit = integrate_orbit(&s, &st, 3.0, OrbitOptions::new(1e-2)).unwrap();
        for (t, x) in orbit.times.iter().zip(&orbit.states) {
            assert!((x.p[0] - 0.25 - t).abs() < 1e-12);
            assert_eq!(x.p[1], 0.5);
        }
        assert!(orbit.max_drift <= 1e-12);
        assert_eq!(orbit.winding(), [3, 0]);
    }

    #[test]
    fn product_torus_fiber_equation() {
        let e = 0.8;
        let s = Scenario::product_torus(e);
        for theta in [0.3, 1.2, 2.5] {
            let st = UnitTangentState::from_angle(&s.metric, [0.0, 0.0], theta);
            let (_, vd) = thermostat_rhs(&s, &st);
            let v0 = st.v[0];
            assert!((vd[0] - e * (1.0 - v0 * v0)).abs() < 1e-15);
        }
    }

    #[test]
    fn covariant_acceleration_is_orthogonal() {
        for seed in 0..5 {
            let s = Scenario::random(seed);
            let st = UnitTangentState::from_angle(&s.metric, [0.3, 0.1 * seed as f64], 0.7 + seed as f64);
            let a = covariant_acceleration(&s, &st);
            assert!(s.metric.inner(st.p, a, st.v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = Scenario::flat();
        let st = UnitTangentState { p: [0.0, 0.0], v: [2.0, 0.0] };
        assert!(matches!(integrate_orbit(&s, &st, 1.0, OrbitOptions::new(0.1)), Err(FlowError::NotUnit(_))));
        let st = UnitTangentState { p: [0.0, 0.0], v: [1.0, 0.0] };
        assert!(matches!(integrate_orbit(&s, &st, 1.0, OrbitOptions::new(0.0)), Err(FlowError::InvalidStep(_))));
    }

    #[test]
    fn oversized_step_is_reported() {
        let s = Scenario::curved_saddle(-0.8, 1.5);
        let st = UnitTangentState::from_angle(&s.metric, [0.1, 0.2], 1.0);
        let err = integrate_orbit(&s, &st, 20.0, OrbitOptions::new(0.5)).unwrap_err();
        assert!(matches!(err, FlowError::StepTooLarge { .. } | FlowError::NonFinite(_)), "{err:?}");
    }

    #[test]
    fn flat_frame_is_constant() {
        let s = Scenario::flat();
        let st = UnitTangentState::from_angle(&s.metric, [0.0, 0.0], 0.4);
        let orbit = fermi_frame(&s, &integrate_orbit(&s, &st, 2.0, OrbitOptions::new(1e-2)).unwrap()).unwrap();
        let tr = orbit.transport.as_ref().unwrap();
        for (w, e) in tr.parallel.iter().zip(&orbit.frames) {
            assert!((w[0] - e[0]).abs() < 1e-14 && (w[1] - e[1]).abs() < 1e-14);
        }
        assert!(tr.twist.iter().all(|a| a.abs() < 1e-14));
    }

    #[test]
    fn recording_stride() {
        let s = Scenario::flat();
        let st = UnitTangentState { p: [0.0, 0.0], v: [0.0, 1.0] };
        let orbit = integrate_orbit(&s, &st, 1.0, OrbitOptions::new(1e-2).record_every(10)).unwrap();
        assert_eq!(orbit.len(), 11);
        assert!((orbit.sample_step - 0.1).abs() < 1e-15);
    }
}
