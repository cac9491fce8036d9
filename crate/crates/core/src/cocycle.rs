//! Transverse derivative cocycle of the thermostat flow.
//!
//! Transverse perturbations are written in the frame `(H, V)` where `H` is the
//! horizontal lift of the unit normal `e₁` and `V` rotates `v` toward `e₁`.
//! In these coordinates Jacobi fields `(y, z)` obey `ẏ = z`, `ż = Q y + σ z`
//! with
//!
//! ```text
//! Q = −K + (∇_{e₁}γ)(e₁) − γ(e₁)²,    σ = −γ(v).
//! ```
//!
//! The `−γ(e₁)²` term comes from projecting along the flow direction: the
//! flow is `X + γ(e₁)V` with `X` the geodesic spray, so `[F, H]` picks up
//! `γ(e₁)²V` modulo `F`.

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cs::{canonical_j, infinitesimal_cs_check, CsError, CsMatrix, InfinitesimalCs};
use crate::flow::{flow_rhs, FlowError, OrbitSegment, UnitTangentState, DRIFT_LIMIT};
use crate::geometry::Scenario;
use crate::numerics::{rk4_step, schedule};

#[derive(Debug, Error)]
pub enum CocycleError {
    #[error("no frame at sample {0}")]
    MissingFrame(usize),
    #[error("step too large: conformal identity residual {residual:e} at t = {time}")]
    StepTooLarge { residual: f64, time: f64 },
    #[error("probe {0} outside [1e-5, 1e-3]")]
    InvalidProbe(f64),
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error("invalid bump: {0}")]
    InvalidBump(String),
    #[error("invalid generator path: {0}")]
    InvalidPath(String),
    #[error("tangent map is not infinitesimally conformally symplectic: {0}")]
    NotTangent(CsError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Generator `[[0, 1], [Q, σ]]` of the transverse cocycle on a surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobiGenerator {
    pub q: f64,
    pub sigma: f64,
    /// Gauss curvature at the base point.
    pub curvature: f64,
    /// `γ(e₁)`, the rotation rate of `v` due to the field.
    pub lambda: f64,
}

impl JacobiGenerator {
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(0.0, 1.0, self.q, self.sigma)
    }

    pub fn dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, self.q, self.sigma])
    }
}

/// Generator at a unit tangent vector.
pub fn generator_at(scenario: &Scenario, state: &UnitTangentState) -> JacobiGenerator {
    let local = scenario.local(state.p);
    let e1 = state.normal();
    let lambda = local.gamma_of(e1);
    let q = -local.curvature + local.covariant_gamma(e1, e1) - lambda * lambda;
    JacobiGenerator { q, sigma: -local.gamma_of(state.v), curvature: local.curvature, lambda }
}

/// Generator at sample `index` of an orbit.
pub fn jacobi_generator(scenario: &Scenario, orbit: &OrbitSegment, index: usize) -> Result<JacobiGenerator, CocycleError> {
    let state = orbit.states.get(index).ok_or(CocycleError::MissingFrame(index))?;
    orbit.frames.get(index).ok_or(CocycleError::MissingFrame(index))?;
    Ok(generator_at(scenario, state))
}

fn coupled_rhs(scenario: &Scenario, y: &[f64; 9]) -> [f64; 9] {
    let base = flow_rhs(scenario, &[y[0], y[1], y[2], y[3]]);
    let st = UnitTangentState { p: [y[0], y[1]], v: [y[2], y[3]] };
    let g = generator_at(scenario, &st);
    // Ṫ = A T with A = [[0, 1], [Q, σ]]
    let (t11, t12, t21, t22) = (y[4], y[5], y[6], y[7]);
    [
        base[0],
        base[1],
        base[2],
        base[3],
        t21,
        t22,
        g.q * t11 + g.sigma * t21,
        g.q * t12 + g.sigma * t22,
        g.sigma,
    ]
}

/// Flow state, cocycle matrix and accumulated `∫σ` propagated together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledState {
    pub state: UnitTangentState,
    pub t: Matrix2<f64>,
    pub s: f64,
}

impl CoupledState {
    pub fn start(state: UnitTangentState) -> Self {
        CoupledState { state, t: Matrix2::identity(), s: 0.0 }
    }

    fn to_array(self) -> [f64; 9] {
        let (p, v, t) = (self.state.p, self.state.v, self.t);
        [p[0], p[1], v[0], v[1], t[(0, 0)], t[(0, 1)], t[(1, 0)], t[(1, 1)], self.s]
    }

    fn from_array(y: &[f64; 9]) -> Self {
        CoupledState {
            state: UnitTangentState { p: [y[0], y[1]], v: [y[2], y[3]] },
            t: Matrix2::new(y[4], y[5], y[6], y[7]),
            s: y[8],
        }
    }

    /// `‖TᵀJT − e^s J‖ / e^s`.
    pub fn conformal_residual(&self) -> f64 {
        conformal_residual(&self.t, self.s)
    }
}

/// `‖TᵀJT − e^s J‖_F / e^s` for a 2×2 cocycle value.
pub fn conformal_residual(t: &Matrix2<f64>, s: f64) -> f64 {
    let j = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    let mu = s.exp();
    (t.transpose() * j * t - j * mu).norm() / mu
}

/// Rounding floor of the conformal residual, `ε‖T‖²_F / e^s`: the
/// determinant of a 2×2 matrix cannot be resolved better than this from its
/// entries.
pub fn conditioning_floor(t: &Matrix2<f64>, s: f64) -> f64 {
    f64::EPSILON * t.norm_squared() / s.exp()
}

/// Advance a coupled state by `n` RK4 steps of size `h`.
pub fn advance(scenario: &Scenario, start: CoupledState, n: usize, h: f64) -> CoupledState {
    let mut y = start.to_array();
    for _ in 0..n {
        y = rk4_step(&y, h, |y| coupled_rhs(scenario, y));
    }
    CoupledState::from_array(&y)
}

/// Cocycle samples `T(t)` with `T(0) = I`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransverseCocycle {
    pub times: Vec<f64>,
    pub matrices: Vec<Matrix2<f64>>,
    /// `s(t) = ∫₀ᵗ σ`.
    pub s: Vec<f64>,
    /// Generator per sample.
    pub generators: Vec<Matrix2<f64>>,
    /// Largest conformal identity residual over the samples.
    pub max_residual: f64,
}

impl TransverseCocycle {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end(&self) -> (&Matrix2<f64>, f64) {
        (self.matrices.last().expect("non-empty"), *self.s.last().expect("non-empty"))
    }

    /// `T(t_j) T(t_i)⁻¹`: the cocycle from sample `i` to sample `j`.
    pub fn transition(&self, i: usize, j: usize) -> Matrix2<f64> {
        let inv = self.matrices[i].try_inverse().expect("cocycle values are invertible");
        self.matrices[j] * inv
    }

    /// `T(t)` as a validated conformally symplectic matrix.
    pub fn cs_matrix(&self, index: usize, tol: f64) -> Result<CsMatrix, CsError> {
        let m = self.matrices[index];
        crate::cs::validate_cs(&DMatrix::from_row_slice(2, 2, &[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]), tol)
    }

    /// `|det T(t) − e^{s(t)}| / e^{s(t)}` at a sample.
    pub fn determinant_residual(&self, index: usize) -> f64 {
        let mu = self.s[index].exp();
        (self.matrices[index].determinant() - mu).abs() / mu
    }

    pub fn conformal_residual(&self, index: usize) -> f64 {
        conformal_residual(&self.matrices[index], self.s[index])
    }

    pub fn conditioning_floor(&self, index: usize) -> f64 {
        conditioning_floor(&self.matrices[index], self.s[index])
    }
}

/// Residual above which the cocycle integration is rejected, unless rounding
/// alone accounts for it (see [`conditioning_floor`]).
pub const IDENTITY_LIMIT: f64 = 1e-3;

/// Residuals up to this multiple of the conditioning floor count as rounding.
pub const ROUNDING_FACTOR: f64 = 100.0;

/// Integrate the cocycle along a sampled orbit.
///
/// The flow is re-integrated together with the cocycle from the orbit's first
/// state on the orbit's own step grid, so the base points coincide with the
/// orbit samples.
pub fn integrate_cocycle(scenario: &Scenario, orbit: &OrbitSegment) -> Result<TransverseCocycle, CocycleError> {
    if orbit.is_empty() {
        return Err(CocycleError::MissingFrame(0));
    }
    let h = orbit.step;
    let every = if h == 0.0 { 1 } else { ((orbit.sample_step / h).round() as usize).max(1) };
    let metric = &scenario.metric;
    let mut y = CoupledState::start(*orbit.start()).to_array();
    let mut out = TransverseCocycle {
        times: Vec::with_capacity(orbit.len()),
        matrices: Vec::with_capacity(orbit.len()),
        s: Vec::with_capacity(orbit.len()),
        generators: Vec::with_capacity(orbit.len()),
        max_residual: 0.0,
    };
    let record = |out: &mut TransverseCocycle, y: &[f64; 9], t: f64| -> Result<(), CocycleError> {
        let c = CoupledState::from_array(y);
        let r = c.conformal_residual();
        if !(r <= IDENTITY_LIMIT.max(ROUNDING_FACTOR * conditioning_floor(&c.t, c.s))) {
            return Err(CocycleError::StepTooLarge { residual: r, time: t });
        }
        out.max_residual = out.max_residual.max(r);
        out.times.push(t);
        out.matrices.push(c.t);
        out.s.push(c.s);
        out.generators.push(generator_at(scenario, &c.state).matrix());
        Ok(())
    };
    record(&mut out, &y, orbit.times[0])?;
    for i in 1..orbit.len() {
        for _ in 0..every {
            y = rk4_step(&y, h, |y| coupled_rhs(scenario, y));
            if orbit.renormalized {
                let k = 1.0 / metric.norm([y[0], y[1]], [y[2], y[3]]);
                y[2] *= k;
                y[3] *= k;
            }
        }
        record(&mut out, &y, orbit.times[i])?;
    }
    Ok(out)
}

/// Cocycle of an abstract time-dependent 2×2 generator, `ṡ = tr A`.
pub fn integrate_generator(
    a: impl Fn(f64) -> Matrix2<f64>,
    duration: f64,
    step: f64,
) -> TransverseCocycle {
    let (n, h) = schedule(duration, step);
    // state: T entries, s, t
    let mut y = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let rhs = |y: &[f64; 6]| {
        let m = a(y[5]);
        let t = Matrix2::new(y[0], y[1], y[2], y[3]);
        let d = m * t;
        [d[(0, 0)], d[(0, 1)], d[(1, 0)], d[(1, 1)], m.trace(), 1.0]
    };
    let mut out = TransverseCocycle {
        times: Vec::with_capacity(n + 1),
        matrices: Vec::with_capacity(n + 1),
        s: Vec::with_capacity(n + 1),
        generators: Vec::with_capacity(n + 1),
        max_residual: 0.0,
    };
    for i in 0..=n {
        if i > 0 {
            y = rk4_step(&y, h, rhs);
        }
        let t = Matrix2::new(y[0], y[1], y[2], y[3]);
        let time = i as f64 * h;
        out.max_residual = out.max_residual.max(conformal_residual(&t, y[4]));
        out.times.push(time);
        out.matrices.push(t);
        out.s.push(y[4]);
        out.generators.push(a(time));
    }
    out
}

fn endpoint(scenario: &Scenario, state: UnitTangentState, duration: f64, step: f64) -> Result<UnitTangentState, CocycleError> {
    let (n, h) = schedule(duration, step);
    let mut y = state.to_array();
    for i in 0..n {
        y = rk4_step(&y, h, |y| flow_rhs(scenario, y));
        if y.iter().any(|c| !c.is_finite()) {
            return Err(FlowError::NonFinite((i + 1) as f64 * h).into());
        }
    }
    let end = UnitTangentState::from_array(&y);
    let drift = (end.energy(&scenario.metric) - 1.0).abs();
    if drift > DRIFT_LIMIT {
        return Err(FlowError::StepTooLarge { drift, limit: DRIFT_LIMIT, time: duration }.into());
    }
    Ok(end)
}

/// Central finite differences of the time-`duration` flow in the directions
/// `H` and `V`, read off in the `(H, V)` frame at the end point.
pub fn fd_oracle(
    scenario: &Scenario,
    state: &UnitTangentState,
    duration: f64,
    step: f64,
    probe: f64,
) -> Result<Matrix2<f64>, CocycleError> {
    if !(1e-5..=1e-3).contains(&probe) {
        return Err(CocycleError::InvalidProbe(probe));
    }
    let metric = &scenario.metric;
    let p = state.p;
    let v = state.v;
    let e1 = state.normal();
    let gamma = metric.christoffel(p).contract(e1, v);
    let horizontal = |sign: f64| {
        let q = [p[0] + sign * probe * e1[0], p[1] + sign * probe * e1[1]];
        let w = [v[0] - sign * probe * gamma[0], v[1] - sign * probe * gamma[1]];
        UnitTangentState::normalized(metric, q, w)
    };
    let vertical = |sign: f64| {
        let (s, c) = (sign * probe).sin_cos();
        UnitTangentState { p, v: [c * v[0] + s * e1[0], c * v[1] + s * e1[1]] }
    };
    let base = endpoint(scenario, *state, duration, step)?;
    let local = scenario.local(base.p);
    let f1 = base.normal();
    let lambda = local.gamma_of(f1);
    let mut out = Matrix2::zeros();
    for (col, perturb) in [&horizontal as &dyn Fn(f64) -> UnitTangentState, &vertical].iter().enumerate() {
        let plus = endpoint(scenario, perturb(1.0), duration, step)?;
        let minus = endpoint(scenario, perturb(-1.0), duration, step)?;
        let dp = [(plus.p[0] - minus.p[0]) / (2.0 * probe), (plus.p[1] - minus.p[1]) / (2.0 * probe)];
        let dv = [(plus.v[0] - minus.v[0]) / (2.0 * probe), (plus.v[1] - minus.v[1]) / (2.0 * probe)];
        let g = local.christoffel.contract(dp, base.v);
        let cov = [dv[0] + g[0], dv[1] + g[1]];
        let along = local.inner(dp, base.v);
        out[(0, col)] = local.inner(dp, f1);
        out[(1, col)] = local.inner(cov, f1) - along * lambda;
    }
    Ok(out)
}

fn smootherstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

/// `δ(t) = 315/(256 r) (1 − u²)⁴`, `u = (t − center)/r`: unit mass, support
/// `[center − r, center + r]`, three continuous derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaBump {
    pub center: f64,
    pub radius: f64,
}

impl DeltaBump {
    /// `[δ, δ′, δ″, δ‴]` at `t`.
    pub fn derivatives(&self, t: f64) -> [f64; 4] {
        let r = self.radius;
        let u = (t - self.center) / r;
        if u.abs() >= 1.0 {
            return [0.0; 4];
        }
        let w = 1.0 - u * u;
        let k = 315.0 / (256.0 * r);
        let g0 = w.powi(4);
        let g1 = -8.0 * u * w.powi(3);
        let g2 = -8.0 * w.powi(3) + 48.0 * u * u * w * w;
        let g3 = 144.0 * u * w * w - 192.0 * u.powi(3) * w;
        [k * g0, k * g1 / r, k * g2 / (r * r), k * g3 / (r * r * r)]
    }
}

/// Time cut-off `h̄` on `[0, 1]`: zero at both ends and on excluded windows,
/// one elsewhere, with smootherstep ramps of width `ramp`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeBump {
    pub ramp: f64,
    pub excluded: Vec<(f64, f64)>,
}

impl TimeBump {
    pub fn value(&self, t: f64) -> f64 {
        let r = self.ramp;
        let mut h = smootherstep(t / r) * smootherstep((1.0 - t) / r);
        for &(a, b) in &self.excluded {
            h *= 1.0 - smootherstep((t - a + r) / r) * smootherstep((b + r - t) / r);
        }
        h
    }

    /// `∫₀¹ (1 − h̄)`.
    pub fn deficit(&self) -> f64 {
        crate::numerics::integrate(|t| 1.0 - self.value(t), 0.0, 1.0, 4000, 8)
    }
}

/// Plateau bump `φ_ε` on `ℝⁿ`: one on `[−ε/4, ε/4]ⁿ`, zero outside
/// `[−ε/2, ε/2]ⁿ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlateauBump {
    pub eps: f64,
}

impl PlateauBump {
    pub fn value(&self, x: &[f64]) -> f64 {
        let q = self.eps / 4.0;
        x.iter().map(|xi| smootherstep((2.0 * q - xi.abs()) / q)).product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BumpProfile {
    pub plateau: PlateauBump,
    pub time: TimeBump,
    pub delta: DeltaBump,
}

impl BumpProfile {
    /// Time bump supported away from the ends, delta pulse centred at `1/2`.
    pub fn standard(radius: f64, ramp: f64) -> Self {
        BumpProfile {
            plateau: PlateauBump { eps: 0.1 },
            time: TimeBump { ramp, excluded: Vec::new() },
            delta: DeltaBump { center: 0.5, radius },
        }
    }

    pub fn validate(&self) -> Result<(), CocycleError> {
        let d = &self.delta;
        if !(d.radius > 0.0 && d.center - d.radius >= 0.0 && d.center + d.radius <= 1.0) {
            return Err(CocycleError::InvalidBump(format!(
                "delta support [{}, {}] leaves [0, 1]",
                d.center - d.radius,
                d.center + d.radius
            )));
        }
        if !(self.time.ramp > 0.0 && self.time.ramp < 0.5) {
            return Err(CocycleError::InvalidBump(format!("ramp {} not in (0, 1/2)", self.time.ramp)));
        }
        if !(self.plateau.eps > 0.0) {
            return Err(CocycleError::InvalidBump(format!("plateau width {}", self.plateau.eps)));
        }
        Ok(())
    }
}

/// Perturbation direction `ζ = (a, b, c; d; λ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FranksPerturbation {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub lambda: f64,
}

impl FranksPerturbation {
    pub fn zero(n: usize) -> Self {
        let z = DMatrix::zeros(n, n);
        FranksPerturbation { a: z.clone(), b: z.clone(), c: z.clone(), d: z, lambda: 0.0 }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn norm(&self) -> f64 {
        (self.a.norm_squared() + self.b.norm_squared() + self.c.norm_squared() + self.d.norm_squared()
            + self.lambda * self.lambda)
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.norm() == 0.0
    }

    pub fn validate(&self) -> Result<(), CocycleError> {
        let n = self.n();
        for (name, m) in [("a", &self.a), ("b", &self.b), ("c", &self.c), ("d", &self.d)] {
            if m.shape() != (n, n) {
                return Err(CocycleError::InvalidPerturbation(format!("{name} is not {n}x{n}")));
            }
            if m != &m.transpose() {
                return Err(CocycleError::InvalidPerturbation(format!("{name} is not symmetric")));
            }
        }
        if self.d.diagonal().iter().any(|&x| x != 0.0) {
            return Err(CocycleError::InvalidPerturbation("d has a non-zero diagonal".into()));
        }
        Ok(())
    }

    /// Random direction with `‖ζ‖ = 1`.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut sym = |zero_diag: bool| {
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    if zero_diag && i == j {
                        continue;
                    }
                    let x: f64 = rng.random_range(-1.0..1.0);
                    m[(i, j)] = x;
                    m[(j, i)] = x;
                }
            }
            m
        };
        let mut z = FranksPerturbation { a: sym(false), b: sym(false), c: sym(false), d: sym(true), lambda: 0.0 };
        z.lambda = rng.random_range(-1.0..1.0);
        let k = 1.0 / z.norm();
        z.a *= k;
        z.b *= k;
        z.c *= k;
        z.d *= k;
        z.lambda *= k;
        z
    }

    /// `P(t) = h̄(t)[a δ + b δ′ + c δ″ + d δ‴]`.
    pub fn p(&self, t: f64, bumps: &BumpProfile) -> DMatrix<f64> {
        let h = bumps.time.value(t);
        let [d0, d1, d2, d3] = bumps.delta.derivatives(t);
        (&self.a * d0 + &self.b * d1 + &self.c * d2 + &self.d * d3) * h
    }

    /// `𝔹(t) = [[0, 0], [P(t), λ C(t)]]` where `C` is the lower-right block of `A`.
    pub fn b_matrix(&self, a: &DMatrix<f64>, t: f64, bumps: &BumpProfile) -> DMatrix<f64> {
        let n = self.n();
        let mut b = DMatrix::zeros(2 * n, 2 * n);
        b.view_mut((n, 0), (n, n)).copy_from(&self.p(t, bumps));
        let c = a.view((n, n), (n, n)).into_owned();
        b.view_mut((n, n), (n, n)).copy_from(&(c * self.lambda));
        b
    }
}

/// Generator path `A(t)` on `[0, 1]`.
pub enum GeneratorPath<'a> {
    /// Evaluable at any time; integrated with the fourth-order Magnus scheme.
    Function(&'a dyn Fn(f64) -> DMatrix<f64>),
    /// Uniform samples on `[0, 1]` (an even number of intervals); integrated
    /// with the exponential midpoint rule on pairs of intervals.
    Sampled(&'a [DMatrix<f64>]),
}

/// Output of [`franks_tangent`].
#[derive(Debug, Clone)]
pub struct FranksTangent {
    /// `Z(1)`.
    pub z: DMatrix<f64>,
    /// `T(1)`.
    pub t: DMatrix<f64>,
    /// `Y(1) = T(1)⁻¹ Z(1)` with its block decomposition.
    pub y: InfinitesimalCs,
}

/// Tolerance for the tangent check in [`franks_tangent`].
pub const TANGENT_TOL: f64 = 1e-8;

fn commutator(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    x * y - y * x
}

/// `(e^Ω, d/ds e^{Ω + sΩ'}|_{s=0})` via the block-triangular exponential.
fn exp_with_derivative(omega: &DMatrix<f64>, d_omega: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = omega.nrows();
    if d_omega.iter().all(|&x| x == 0.0) {
        return (omega.exp(), DMatrix::zeros(m, m));
    }
    let mut block = DMatrix::zeros(2 * m, 2 * m);
    block.view_mut((0, 0), (m, m)).copy_from(omega);
    block.view_mut((m, m), (m, m)).copy_from(omega);
    block.view_mut((0, m), (m, m)).copy_from(d_omega);
    let e = block.exp();
    (e.view((0, 0), (m, m)).into_owned(), e.view((0, m), (m, m)).into_owned())
}

/// Derivative of the time-one cocycle of `A + s𝔹` in the direction `ζ`:
/// `Ż = A Z + 𝔹 T`, `Z(0) = 0`.
///
/// Each step applies the exponential of a Magnus expansion of `A + s𝔹` and its
/// exact `s`-derivative. The step map is then conformally symplectic for every
/// `s`, so `T(1)⁻¹Z(1)` is infinitesimally conformally symplectic up to
/// rounding, independently of the step size.
pub fn franks_tangent(
    path: &GeneratorPath,
    zeta: &FranksPerturbation,
    bumps: &BumpProfile,
    steps: usize,
) -> Result<FranksTangent, CocycleError> {
    zeta.validate()?;
    bumps.validate()?;
    let n = zeta.n();
    let dim = 2 * n;
    let mut t = DMatrix::identity(dim, dim);
    let mut z = DMatrix::zeros(dim, dim);
    let check_dim = |a: &DMatrix<f64>| -> Result<(), CocycleError> {
        if a.shape() != (dim, dim) {
            return Err(CocycleError::InvalidPath(format!("generator is {:?}, expected {dim}x{dim}", a.shape())));
        }
        Ok(())
    };
    let apply = |omega: DMatrix<f64>, d_omega: DMatrix<f64>, t: &mut DMatrix<f64>, z: &mut DMatrix<f64>| {
        let (phi, d) = exp_with_derivative(&omega, &d_omega);
        *z = &d * &*t + &phi * &*z;
        *t = &phi * &*t;
    };
    match path {
        GeneratorPath::Function(a) => {
            if steps == 0 {
                return Err(CocycleError::InvalidPath("zero steps".into()));
            }
            let h = 1.0 / steps as f64;
            let off = 3f64.sqrt() / 6.0;
            let c = 3f64.sqrt() / 12.0 * h * h;
            for k in 0..steps {
                let t0 = k as f64 * h;
                let (s1, s2) = (t0 + (0.5 - off) * h, t0 + (0.5 + off) * h);
                let (a1, a2) = (a(s1), a(s2));
                check_dim(&a1)?;
                let (b1, b2) = (zeta.b_matrix(&a1, s1, bumps), zeta.b_matrix(&a2, s2, bumps));
                let omega = (&a1 + &a2) * (0.5 * h) + commutator(&a2, &a1) * c;
                let d_omega = (&b1 + &b2) * (0.5 * h) + (commutator(&b2, &a1) + commutator(&a2, &b1)) * c;
                apply(omega, d_omega, &mut t, &mut z);
            }
        }
        GeneratorPath::Sampled(samples) => {
            let intervals = samples.len().saturating_sub(1);
            if intervals == 0 || intervals % 2 != 0 {
                return Err(CocycleError::InvalidPath(format!("{intervals} intervals, need a positive even count")));
            }
            let dt = 1.0 / intervals as f64;
            for k in (0..intervals).step_by(2) {
                let mid = &samples[k + 1];
                check_dim(mid)?;
                let tm = (k + 1) as f64 * dt;
                let omega = mid * (2.0 * dt);
                let d_omega = zeta.b_matrix(mid, tm, bumps) * (2.0 * dt);
                apply(omega, d_omega, &mut t, &mut z);
            }
        }
    }
    let t_inv = t.clone().try_inverse().ok_or(CocycleError::NotTangent(CsError::Singular { det: 0.0 }))?;
    let y_raw = &t_inv * &z;
    let y = infinitesimal_cs_check(&y_raw, TANGENT_TOL).map_err(CocycleError::NotTangent)?;
    let scale = y_raw.amax().max(1.0);
    let sym = y.alpha_asymmetry.max(y.gamma_asymmetry).max(y.delta_defect) / scale;
    if sym > TANGENT_TOL {
        return Err(CocycleError::NotTangent(CsError::NotInfinitesimallyCs { residual: sym, tol: TANGENT_TOL }));
    }
    Ok(FranksTangent { z, t, y })
}

/// Generator samples along an orbit whose duration is one time unit, for
/// [`GeneratorPath::Sampled`].
pub fn orbit_generator_samples(scenario: &Scenario, orbit: &OrbitSegment) -> Vec<DMatrix<f64>> {
    orbit.states.iter().map(|s| generator_at(scenario, s).dmatrix()).collect()
}

/// Block generator `[[0, I], [Q, σI]]` for an abstract `n`.
pub fn block_generator(q: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let n = q.nrows();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    a.view_mut((n, 0), (n, n)).copy_from(q);
    a.view_mut((n, n), (n, n)).fill_diagonal(sigma);
    a
}

/// `‖TᵀJT − mu J‖_F / mu` for an arbitrary even-dimensional matrix.
pub fn conformal_defect(t: &DMatrix<f64>, mu: f64) -> f64 {
    let j = canonical_j(t.nrows() / 2);
    (t.transpose() * &j * t - &j * mu).norm() / mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate_orbit, OrbitOptions};

    #[test]
    fn flat_generator_is_nilpotent() {
        let s = Scenario::flat();
        let st = UnitTangentState { p: [0.1, 0.2], v: [0.6, 0.8] };
        assert_eq!(generator_at(&s, &st).matrix(), Matrix2::new(0.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn constant_field_on_attractor() {
        let e = 0.4;
        let s = Scenario::product_torus(e);
        let on = UnitTangentState { p: [0.0, 0.3], v: [1.0, 0.0] };
        let g = generator_at(&s, &on);
        assert_eq!(g.q, 0.0);
        assert_eq!(g.sigma, -e);
        // off the attractor the projection term survives
        let off = UnitTangentState::from_angle(&s.metric, [0.0, 0.0], 0.9);
        let g = generator_at(&s, &off);
        assert!((g.q + (e * off.v[1]).powi(2)).abs() < 1e-15);
        assert!((g.sigma + e * off.v[0]).abs() < 1e-15);
    }

    #[test]
    fn geodesic_generator_is_classical() {
        let s = Scenario::curved_saddle(-0.3, 0.0);
        for theta in [0.2, 1.0, 2.2] {
            let st = UnitTangentState::from_angle(&s.metric, [0.1, 0.37], theta);
            let g = generator_at(&s, &st);
            assert!((g.q + s.metric.gauss_curvature(st.p)).abs() < 1e-14);
            assert_eq!(g.sigma, 0.0);
        }
    }

    #[test]
    fn flat_cocycle_is_a_shear() {
        let s = Scenario::flat();
        let st = UnitTangentState { p: [0.0, 0.0], v: [0.6, 0.8] };
        let orbit = integrate_orbit(&s, &st, 3.0, OrbitOptions::new(0.01)).unwrap();
        let c = integrate_cocycle(&s, &orbit).unwrap();
        for (t, m) in c.times.iter().zip(&c.matrices) {
            assert!((m - Matrix2::new(1.0, *t, 0.0, 1.0)).amax() < 1e-12);
        }
        assert!(c.s.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_generator_closed_form() {
        let sigma = -0.7;
        let c = integrate_generator(|_| Matrix2::new(0.0, 1.0, 0.0, sigma), 2.0, 1e-3);
        let (m, s) = c.end();
        let e = (sigma * 2.0).exp();
        assert!((m - Matrix2::new(1.0, (e - 1.0) / sigma, 0.0, e)).amax() < 1e-12);
        assert!((s - sigma * 2.0).abs() < 1e-12);
    }

    #[test]
    fn fd_flat_shear() {
        let s = Scenario::flat();
        let st = UnitTangentState { p: [0.0, 0.0], v: [1.0, 0.0] };
        let m = fd_oracle(&s, &st, 2.0, 1e-3, 1e-4).unwrap();
        assert!((m - Matrix2::new(1.0, 2.0, 0.0, 1.0)).amax() < 1e-6);
        assert!(matches!(fd_oracle(&s, &st, 2.0, 1e-3, 1e-2), Err(CocycleError::InvalidProbe(_))));
    }

    #[test]
    fn delta_has_unit_mass_and_consistent_derivatives() {
        let d = DeltaBump { center: 0.4, radius: 0.2 };
        let mass = crate::numerics::integrate(|t| d.derivatives(t)[0], 0.2, 0.6, 64, 8);
        assert!((mass - 1.0).abs() < 1e-13);
        let h = 1e-5;
        for t in [0.25, 0.33, 0.41, 0.55] {
            let [_, d1, d2, d3] = d.derivatives(t);
            let fd = |k: usize| (d.derivatives(t + h)[k] - d.derivatives(t - h)[k]) / (2.0 * h);
            assert!((fd(0) - d1).abs() < 1e-5 * d1.abs().max(1.0));
            assert!((fd(1) - d2).abs() < 1e-5 * d2.abs().max(1.0));
            assert!((fd(2) - d3).abs() < 1e-5 * d3.abs().max(1.0));
        }
    }

    #[test]
    fn time_bump_deficit_and_windows() {
        let b = TimeBump { ramp: 0.1, excluded: vec![] };
        assert!((b.deficit() - 0.1).abs() < 1e-10);
        assert_eq!(b.value(0.0), 0.0);
        assert_eq!(b.value(0.5), 1.0);
        let w = TimeBump { ramp: 0.05, excluded: vec![(0.4, 0.5)] };
        assert_eq!(w.value(0.45), 0.0);
        assert!((w.deficit() - (0.05 + 0.1 + 0.05)).abs() < 1e-10);
    }

    #[test]
    fn plateau_bump_levels() {
        let p = PlateauBump { eps: 0.4 };
        assert_eq!(p.value(&[0.1, -0.05]), 1.0);
        assert_eq!(p.value(&[0.25, 0.0]), 0.0);
        let mid = p.value(&[0.15, 0.0]);
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn zero_perturbation_gives_zero_tangent() {
        let a = block_generator(&DMatrix::from_element(1, 1, 0.3), -0.2);
        let f = |_: f64| a.clone();
        let out = franks_tangent(&GeneratorPath::Function(&f), &FranksPerturbation::zero(1), &BumpProfile::standard(0.2, 0.05), 50)
            .unwrap();
        assert!(out.z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn perturbation_validation() {
        let mut z = FranksPerturbation::zero(2);
        z.d[(0, 0)] = 1.0;
        assert!(z.validate().is_err());
        let mut z = FranksPerturbation::zero(2);
        z.a[(0, 1)] = 1.0;
        assert!(z.validate().is_err());
    }
}
