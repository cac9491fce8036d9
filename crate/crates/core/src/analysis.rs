//! Lyapunov spectra, closed orbits, β and its surgery, cone invariance and
//! domination estimates for the transverse cocycle.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cocycle::{
    advance, generator_at, integrate_cocycle, integrate_generator, CocycleError, CoupledState, JacobiGenerator, TransverseCocycle,
};
use crate::cs::{eigen_pairing_with, validate_cs, CsError, CsMatrix, PAIRING_TOL};
use crate::flow::{flow_rhs, integrate_orbit, FlowError, OrbitOptions, OrbitSegment, UnitTangentState};
use crate::geometry::{ClosedFormField, Scenario};
use crate::numerics::{rk4_step, schedule, simpson, wrap_centered};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("horizon {horizon} is shorter than 1000 steps of {step}")]
    InvalidHorizon { horizon: f64, step: f64 },
    #[error("cocycle blew up at t = {time} even with single-step windows")]
    Blowup { time: f64 },
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("orbit meets the section tangentially at t = {time} (normal speed {speed:e})")]
    TangentCrossing { time: f64, speed: f64 },
    #[error("no return to the section within t = {max_time}")]
    NoReturn { max_time: f64 },
    #[error("orbit is not closed: gap {gap:e}")]
    NotClosed { gap: f64 },
    #[error("orbit is null-homologous; no cohomological surgery shifts its β")]
    NullHomologous,
    #[error("cone parameter {0} must lie in (0, 1/2]")]
    InvalidCone(f64),
    #[error("degenerate bundle: {0}")]
    DegenerateBundle(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
    #[error(transparent)]
    Cs(#[from] CsError),
}

// ---------------------------------------------------------------- Lyapunov

/// Transverse Lyapunov exponents and the volume growth rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    /// Ascending.
    pub exponents: [f64; 2],
    /// `s(T)/T`, the mean of `σ`.
    pub b: f64,
    pub horizon: f64,
    pub step: f64,
    /// `|λ₁ + λ₂ − b|`.
    pub pairing_residual: f64,
    /// Number of windows that had to be split after an overflow.
    pub rewindows: usize,
    pub final_state: UnitTangentState,
}

/// Default QR window in time units.
pub const LYAPUNOV_WINDOW: f64 = 10.0;

/// Exponents of the transverse cocycle by QR re-orthonormalization every
/// `window` time units.
pub fn lyapunov_spectrum(
    scenario: &Scenario,
    state: &UnitTangentState,
    horizon: f64,
    step: f64,
    window: f64,
) -> Result<LyapunovReport, AnalysisError> {
    if !(step > 0.0) || !(horizon >= 1e3 * step) {
        return Err(AnalysisError::InvalidHorizon { horizon, step });
    }
    let (n, h) = schedule(horizon, step);
    let window_steps = ((window / h).round() as usize).max(1);
    let mut current = CoupledState::start(*state);
    let mut logs = [0.0f64; 2];
    let mut done = 0usize;
    let mut rewindows = 0usize;
    let mut chunk = window_steps;
    while done < n {
        let k = chunk.min(n - done);
        let next = advance(scenario, current, k, h);
        let bad = !next.t.iter().all(|x| x.is_finite()) || next.t.norm() > 1e100
            || !next.state.p.iter().chain(&next.state.v).all(|x| x.is_finite());
        if bad {
            if k == 1 {
                return Err(AnalysisError::Blowup { time: done as f64 * h });
            }
            chunk = (k / 2).max(1);
            rewindows += 1;
            continue;
        }
        let qr = next.t.qr();
        let (mut q, r) = (qr.q(), qr.r());
        for i in 0..2 {
            logs[i] += r[(i, i)].abs().ln();
            if r[(i, i)] < 0.0 {
                q.column_mut(i).neg_mut();
            }
        }
        current = CoupledState { t: q, ..next };
        done += k;
        chunk = window_steps;
    }
    let total = n as f64 * h;
    let mut exponents = [logs[0] / total, logs[1] / total];
    exponents.sort_by(f64::total_cmp);
    let b = current.s / total;
    Ok(LyapunovReport {
        exponents,
        b,
        horizon: total,
        step: h,
        pairing_residual: (exponents[0] + exponents[1] - b).abs(),
        rewindows,
        final_state: current.state,
    })
}

// ---------------------------------------------------------------- sections

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionAxis {
    X,
    Y,
}

/// Section `{axis coordinate ≡ level mod 1}` crossed in the positive direction.
/// Points on it are described by the other coordinate and the chart angle of `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Section {
    pub axis: SectionAxis,
    pub level: f64,
}

impl Section {
    pub fn new(axis: SectionAxis, level: f64) -> Self {
        Section { axis, level }
    }

    fn normal_index(&self) -> usize {
        match self.axis {
            SectionAxis::X => 0,
            SectionAxis::Y => 1,
        }
    }

    fn along_index(&self) -> usize {
        1 - self.normal_index()
    }

    /// State on the section at `(u, φ)`.
    pub fn state(&self, scenario: &Scenario, u: f64, phi: f64) -> UnitTangentState {
        let mut p = [0.0; 2];
        p[self.normal_index()] = self.level;
        p[self.along_index()] = u;
        UnitTangentState::from_angle(&scenario.metric, p, phi)
    }

    /// Section coordinates `(u, φ)` of a state lying on the section.
    pub fn coordinates(&self, state: &UnitTangentState) -> [f64; 2] {
        [state.p[self.along_index()], state.angle()]
    }

    fn offset(&self, state: &UnitTangentState) -> f64 {
        wrap_centered(state.p[self.normal_index()] - self.level, 1.0)
    }
}

/// One evaluation of the first-return map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Return {
    pub time: f64,
    pub end: UnitTangentState,
    /// Section coordinates of the return point.
    pub coords: [f64; 2],
}

/// Settings for the return map and Newton refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodicOptions {
    pub step: f64,
    pub max_iterations: usize,
    pub tol: f64,
    /// Finite-difference step for the return-map Jacobian.
    pub jacobian_step: f64,
    pub max_return_time: f64,
}

impl PeriodicOptions {
    pub fn new(step: f64) -> Self {
        PeriodicOptions { step, max_iterations: 30, tol: 1e-10, jacobian_step: 1e-6, max_return_time: 100.0 }
    }
}

/// Normal speed below which a crossing counts as tangential.
const TANGENT_SPEED: f64 = 1e-8;

/// Flow from `state` until the next positive crossing of the section.
pub fn first_return(
    scenario: &Scenario,
    section: &Section,
    state: &UnitTangentState,
    options: &PeriodicOptions,
) -> Result<Return, AnalysisError> {
    let axis = section.normal_index();
    let h = options.step;
    let max_steps = (options.max_return_time / h).ceil() as usize;
    let level = |y: &[f64; 4]| y[axis] - section.level;
    let mut y = state.to_array();
    let mut floor = level(&y).floor();
    if level(&y) - floor > 1.0 - 1e-14 {
        floor += 1.0;
    }
    for i in 0..max_steps {
        let next = rk4_step(&y, h, |y| flow_rhs(scenario, y));
        if next.iter().any(|c| !c.is_finite()) {
            return Err(FlowError::NonFinite((i + 1) as f64 * h).into());
        }
        let next_floor = level(&next).floor();
        if next_floor > floor {
            let target = next_floor;
            let g = |tau: f64| -> ([f64; 4], f64) {
                let z = rk4_step(&y, tau, |y| flow_rhs(scenario, y));
                let val = level(&z) - target;
                (z, val)
            };
            // Illinois regula falsi on the partial step length
            let (mut a, mut fa) = (0.0, level(&y) - target);
            let (mut b, mut fb) = (h, level(&next) - target);
            let mut best = (next, fb, h);
            let mut side = 0i8;
            for _ in 0..100 {
                if fb == 0.0 || (b - a).abs() < 1e-17 {
                    break;
                }
                let c = (a * fb - b * fa) / (fb - fa);
                let (z, fc) = g(c);
                if fc.abs() < best.1.abs() {
                    best = (z, fc, c);
                }
                if fc == 0.0 {
                    break;
                }
                if (fc > 0.0) == (fb > 0.0) {
                    b = c;
                    fb = fc;
                    if side == 1 {
                        fa *= 0.5;
                    }
                    side = 1;
                } else {
                    a = c;
                    fa = fc;
                    if side == -1 {
                        fb *= 0.5;
                    }
                    side = -1;
                }
                if best.1.abs() < 1e-15 {
                    break;
                }
            }
            let (z, _, tau) = best;
            let speed = z[2 + axis];
            if speed <= TANGENT_SPEED {
                return Err(AnalysisError::TangentCrossing { time: i as f64 * h + tau, speed });
            }
            let end = UnitTangentState::from_array(&z);
            return Ok(Return { time: i as f64 * h + tau, end, coords: section.coordinates(&end) });
        }
        floor = floor.min(next_floor);
        y = next;
    }
    Err(AnalysisError::NoReturn { max_time: options.max_return_time })
}

/// Closed orbit found by Newton refinement of the return map.
#[derive(Debug, Clone, Serialize)]
pub struct PeriodicOrbit {
    pub seed: UnitTangentState,
    /// Section coordinates `(u, φ)` of the fixed point.
    pub section_point: [f64; 2],
    pub period: f64,
    /// Sup-norm of `P(x) − x` (shift by the winding along the section).
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    pub winding: [i64; 2],
    /// `T(L)` as a conformally symplectic matrix.
    #[serde(skip)]
    pub return_derivative: CsMatrix,
    pub return_matrix: [[f64; 2]; 2],
    pub mu: f64,
    /// `s(L) = ∫σ` over one period.
    pub s_period: f64,
    pub beta: BetaReport,
    #[serde(skip)]
    pub orbit: OrbitSegment,
    #[serde(skip)]
    pub cocycle: TransverseCocycle,
}

fn section_residual(start: [f64; 2], ret: [f64; 2], shift: f64) -> [f64; 2] {
    [ret[0] - start[0] - shift, wrap_centered(ret[1] - start[1], std::f64::consts::TAU)]
}

/// Newton iteration on the first-return map to the section, with a
/// finite-difference Jacobian and a pseudo-inverse step (neutral directions
/// are left untouched). On success the orbit is re-integrated over one period
/// with its cocycle, return derivative and β.
pub fn find_periodic(
    scenario: &Scenario,
    seed: &UnitTangentState,
    section: &Section,
    options: &PeriodicOptions,
) -> Result<PeriodicOrbit, AnalysisError> {
    let start = if section.offset(seed).abs() > 1e-12 {
        first_return(scenario, section, seed, options)?.end
    } else {
        *seed
    };
    let axis = section.normal_index();
    if start.v[axis] <= TANGENT_SPEED {
        return Err(AnalysisError::TangentCrossing { time: 0.0, speed: start.v[axis] });
    }
    let base_level = start.p[axis];
    let along = section.along_index();
    let make = |x: [f64; 2]| {
        let mut st = section.state(scenario, x[0], x[1]);
        st.p[axis] = base_level;
        st
    };
    let mut x = section.coordinates(&start);
    let first = first_return(scenario, section, &make(x), options)?;
    let shift = (first.coords[0] - x[0]).round();
    let eval = |x: [f64; 2]| -> Result<([f64; 2], Return), AnalysisError> {
        let r = first_return(scenario, section, &make(x), options)?;
        Ok((section_residual(x, r.coords, shift), r))
    };
    let mut history = Vec::new();
    let mut iterations = 0;
    let (mut fx, mut ret) = eval(x)?;
    loop {
        let residual = fx[0].abs().max(fx[1].abs());
        history.push(residual);
        if residual <= options.tol {
            break;
        }
        if iterations >= options.max_iterations {
            return Err(AnalysisError::NoConvergence { iterations, residual });
        }
        let d = options.jacobian_step;
        let mut jac = DMatrix::zeros(2, 2);
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += d;
            xm[k] -= d;
            let (fp, _) = eval(xp)?;
            let (fm, _) = eval(xm)?;
            for r in 0..2 {
                jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * d);
            }
        }
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let pinv = svd
            .pseudo_inverse(1e-8 * smax.max(1e-300))
            .map_err(|e| AnalysisError::InvalidInput(e.to_string()))?;
        let dx = pinv * DMatrix::from_column_slice(2, 1, &fx);
        x = [x[0] - dx[0], x[1] - dx[1]];
        iterations += 1;
        let (f_new, r_new) = eval(x)?;
        fx = f_new;
        ret = r_new;
    }
    let period = ret.time;
    let seed_state = make(x);
    let orbit = integrate_orbit(scenario, &seed_state, period, OrbitOptions::new(options.step))?;
    let cocycle = integrate_cocycle(scenario, &orbit)?;
    let (t_end, s_end) = cocycle.end();
    let m = DMatrix::from_row_slice(2, 2, &[t_end[(0, 0)], t_end[(0, 1)], t_end[(1, 0)], t_end[(1, 1)]]);
    let return_derivative = validate_cs(&m, 1e-6)?;
    let beta = beta_of_orbit(scenario, &orbit, 1e-6)?;
    let mut winding = [0i64; 2];
    winding[along] = shift as i64;
    winding[axis] = (ret.end.p[axis] - base_level).round() as i64;
    Ok(PeriodicOrbit {
        seed: seed_state,
        section_point: x,
        period,
        residual: *history.last().expect("at least one evaluation"),
        residual_history: history,
        iterations,
        winding,
        mu: return_derivative.mu(),
        return_matrix: [[t_end[(0, 0)], t_end[(0, 1)]], [t_end[(1, 0)], t_end[(1, 1)]]],
        return_derivative,
        s_period: s_end,
        beta,
        orbit,
        cocycle,
    })
}

// ---------------------------------------------------------- classification

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodicKind {
    Saddle,
    Sink,
    Source,
    NonHyperbolic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub kind: PeriodicKind,
    /// `(re, im)` of the eigenvalues, smaller modulus first.
    pub eigenvalues: Vec<[f64; 2]>,
    pub moduli: Vec<f64>,
    pub contracting: usize,
    pub expanding: usize,
    pub neutral: usize,
    /// `log |λ₁λ₂|`, to compare with `±β`.
    pub log_product: f64,
    pub mu: f64,
}

/// Band around the unit circle for orbit classification.
pub const CLASSIFY_TOL: f64 = 1e-6;

pub fn classify_periodic(m: &CsMatrix) -> Result<Classification, AnalysisError> {
    classify_with(m, CLASSIFY_TOL)
}

pub fn classify_with(m: &CsMatrix, tol: f64) -> Result<Classification, AnalysisError> {
    let pairing = eigen_pairing_with(m, PAIRING_TOL, tol)?;
    let eig: Vec<_> = pairing.eigenvalues().collect();
    let moduli: Vec<f64> = eig.iter().map(|l| l.norm()).collect();
    let contracting = moduli.iter().filter(|&&r| r < 1.0 - tol).count();
    let expanding = moduli.iter().filter(|&&r| r > 1.0 + tol).count();
    let neutral = moduli.len() - contracting - expanding;
    let kind = if neutral > 0 {
        PeriodicKind::NonHyperbolic
    } else if expanding == 0 {
        PeriodicKind::Sink
    } else if contracting == 0 {
        PeriodicKind::Source
    } else {
        PeriodicKind::Saddle
    };
    let log_product = moduli.iter().map(|r| r.ln()).sum();
    Ok(Classification {
        kind,
        eigenvalues: eig.iter().map(|l| [l.re, l.im]).collect(),
        moduli,
        contracting,
        expanding,
        neutral,
        log_product,
        mu: m.mu(),
    })
}

// -------------------------------------------------------------------- beta

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaReport {
    /// Simpson quadrature of `γ(v)` over the orbit.
    pub beta: f64,
    /// `c1·p + c2·q` for winding `(p, q)`.
    pub cohomological: f64,
    pub winding: [i64; 2],
    /// Distance of the end state from the start state modulo `ℤ²`.
    pub closure_gap: f64,
}

/// `∮ γ(η̇)` along a closed orbit.
pub fn beta_of_orbit(scenario: &Scenario, orbit: &OrbitSegment, closure_tol: f64) -> Result<BetaReport, AnalysisError> {
    let (a, b) = (orbit.start(), orbit.end());
    let gap = [
        wrap_centered(b.p[0] - a.p[0], 1.0),
        wrap_centered(b.p[1] - a.p[1], 1.0),
        b.v[0] - a.v[0],
        b.v[1] - a.v[1],
    ]
    .iter()
    .fold(0.0f64, |m, x| m.max(x.abs()));
    if !(gap <= closure_tol) {
        return Err(AnalysisError::NotClosed { gap });
    }
    beta_along(scenario, orbit, gap)
}

fn beta_along(scenario: &Scenario, orbit: &OrbitSegment, gap: f64) -> Result<BetaReport, AnalysisError> {
    let values: Vec<f64> = orbit.states.iter().map(|s| scenario.field.apply(s.p, s.v)).collect();
    let beta = simpson(&values, orbit.sample_step);
    let winding = orbit.winding();
    let c = scenario.field.c;
    Ok(BetaReport {
        beta,
        cohomological: c[0] * winding[0] as f64 + c[1] * winding[1] as f64,
        winding,
        closure_gap: gap,
    })
}

/// Shift the harmonic part of `γ` so that `β` of any loop in the class
/// `(p, q)` grows by `alpha`.
pub fn beta_surgery(field: &ClosedFormField, winding: [i64; 2], alpha: f64) -> Result<ClosedFormField, AnalysisError> {
    let (p, q) = (winding[0] as f64, winding[1] as f64);
    let n2 = p * p + q * q;
    if n2 == 0.0 {
        return Err(AnalysisError::NullHomologous);
    }
    let mut out = field.clone();
    out.c[0] += alpha * p / n2;
    out.c[1] += alpha * q / n2;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SurgeryReport {
    pub alpha: f64,
    pub field: ClosedFormField,
    pub beta_before: f64,
    /// `β` of the unchanged curve under the new field.
    pub beta_same_curve: f64,
    pub log_det_before: f64,
    pub log_det_after: f64,
    /// Closed orbit of the new field, continued from the old one.
    pub orbit_after: PeriodicOrbit,
}

/// Surgery on a closed orbit followed by re-locating the orbit of the new
/// field from the old seed.
pub fn surgery_on_orbit(
    scenario: &Scenario,
    orbit: &PeriodicOrbit,
    section: &Section,
    alpha: f64,
    options: &PeriodicOptions,
) -> Result<SurgeryReport, AnalysisError> {
    let field = beta_surgery(&scenario.field, orbit.winding, alpha)?;
    let after = scenario.with_field(field.clone());
    let same_curve = beta_along(&after, &orbit.orbit, orbit.beta.closure_gap)?;
    let orbit_after = find_periodic(&after, &orbit.seed, section, options)?;
    Ok(SurgeryReport {
        alpha,
        field,
        beta_before: orbit.beta.beta,
        beta_same_curve: same_curve.beta,
        log_det_before: orbit.return_derivative.entries().determinant().ln(),
        log_det_after: orbit_after.return_derivative.entries().determinant().ln(),
        orbit_after,
    })
}

// -------------------------------------------------------------------- cones

/// `𝓛(ξ) = ⟨ξ_h, ξ_v⟩ = y z` for `ξ = (y, z)`.
pub fn cone_function(xi: [f64; 2]) -> f64 {
    xi[0] * xi[1]
}

/// `d𝓛/dt = z² + Q y² + σ y z` along the Jacobi equation.
pub fn cone_derivative(generator: &JacobiGenerator, xi: [f64; 2]) -> f64 {
    let [y, z] = xi;
    z * z + generator.q * y * y + generator.sigma * y * z
}

/// Unit directions with `𝓛 = k` (up to sign).
pub fn cone_boundary(k: f64) -> Result<[[f64; 2]; 2], AnalysisError> {
    if !(k > 0.0 && k <= 0.5) {
        return Err(AnalysisError::InvalidCone(k));
    }
    let psi1 = 0.5 * (2.0 * k).asin();
    let psi2 = std::f64::consts::FRAC_PI_2 - psi1;
    Ok([[psi1.cos(), psi1.sin()], [psi2.cos(), psi2.sin()]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeSample {
    pub index: usize,
    pub t: f64,
    pub direction: [f64; 2],
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeVerdict {
    Invariant,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeReport {
    pub k: f64,
    pub grid: usize,
    pub samples: Vec<ConeSample>,
    pub min_margin: f64,
    pub verdict: ConeVerdict,
    /// `Q ≥ 0` at every sampled point.
    pub q_nonnegative: bool,
    /// `γ(v) > 0` at every sampled point.
    pub gamma_positive: bool,
}

/// Orbit sample indices of an evenly spaced grid of `grid` points.
pub fn grid_indices(len: usize, grid: usize) -> Vec<usize> {
    if grid >= len || grid < 2 {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> =
        (0..grid).map(|i| ((i as f64) * (len - 1) as f64 / (grid - 1) as f64).round() as usize).collect();
    idx.dedup();
    idx
}

/// Evaluate `d𝓛/dt` on the cone boundary `𝓛 = k` at `grid` orbit samples.
pub fn cone_invariance_test(
    scenario: &Scenario,
    orbit: &OrbitSegment,
    k: f64,
    grid: usize,
) -> Result<ConeReport, AnalysisError> {
    let dirs = cone_boundary(k)?;
    let indices = grid_indices(orbit.len(), grid);
    let per_point: Vec<(Vec<ConeSample>, f64, f64)> = indices
        .par_iter()
        .map(|&i| {
            let g = generator_at(scenario, &orbit.states[i]);
            let samples = dirs
                .iter()
                .map(|&d| ConeSample { index: i, t: orbit.times[i], direction: d, margin: cone_derivative(&g, d) })
                .collect();
            (samples, g.q, -g.sigma)
        })
        .collect();
    let mut samples = Vec::with_capacity(2 * indices.len());
    let mut q_nonnegative = true;
    let mut gamma_positive = true;
    for (s, q, gv) in per_point {
        samples.extend(s);
        q_nonnegative &= q >= 0.0;
        gamma_positive &= gv > 0.0;
    }
    let min_margin = samples.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min);
    Ok(ConeReport {
        k,
        grid: indices.len(),
        samples,
        min_margin,
        verdict: if min_margin > 0.0 { ConeVerdict::Invariant } else { ConeVerdict::Violated },
        q_nonnegative,
        gamma_positive,
    })
}

// --------------------------------------------------------------- domination

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationEstimate {
    /// Smallest `l` with every ratio below `1/2`.
    pub l: Option<usize>,
    /// Worst ratio at `l`, or at `l_max` when no `l` qualifies.
    pub worst_ratio: f64,
    /// Worst ratio per `l = 1..=l_max`.
    pub ratios: Vec<f64>,
    /// Angles of the sampled `F` (weak) and `G` (dominating) directions.
    pub f_angles: Vec<f64>,
    pub g_angles: Vec<f64>,
    /// Largest change of a bundle direction when the window is doubled.
    pub bundle_change: f64,
    /// Smallest singular-value ratio of the window products.
    pub min_gap: f64,
    pub window: usize,
    pub diagnostic: Option<String>,
}

/// Bundle directions that move more than this when the window doubles are
/// treated as unresolved.
pub const BUNDLE_TOL: f64 = 1e-3;

/// Default window, in letters (time units).
pub const DOMINATION_WINDOW: usize = 20;

fn leading_left(m: &Matrix2<f64>) -> (Vector2<f64>, f64) {
    let svd = m.svd(true, false);
    let u = svd.u.expect("requested");
    let s = svd.singular_values;
    let (i, j) = if s[0] >= s[1] { (0, 1) } else { (1, 0) };
    let ratio = if s[j] > 0.0 { s[i] / s[j] } else { f64::INFINITY };
    (u.column(i).into_owned(), ratio)
}

fn product(letters: &[Matrix2<f64>]) -> Matrix2<f64> {
    letters.iter().fold(Matrix2::identity(), |acc, a| a * acc)
}

fn angle_between(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0);
    c.acos()
}

/// Bundles at position `i` (before letter `i`) for a window of `w` letters.
fn bundles(letters: &[Matrix2<f64>], i: usize, w: usize) -> Result<(Vector2<f64>, Vector2<f64>, f64), AnalysisError> {
    let backward = product(&letters[i..i + w])
        .try_inverse()
        .ok_or_else(|| AnalysisError::DegenerateBundle(format!("singular window product at {i}")))?;
    let (f, gap_f) = leading_left(&backward);
    let (g, gap_g) = leading_left(&product(&letters[i - w..i]));
    Ok((f, g, gap_f.min(gap_g)))
}

/// Estimate the dominated splitting of a cocycle given by one letter per time
/// unit, `A_k = T(k+1)T(k)⁻¹`.
///
/// `G` at each position is the leading left singular direction of the forward
/// product over the preceding `window` letters, `F` that of the backward product
/// over the following ones. The ratio test
/// `‖A^l|_F‖ · ‖A^{-l}|_G‖ < 1/2` is scanned for `l = 1..=l_max`. When the
/// bundles do not settle under doubling of the window, or the singular gap is
/// too small, no `l` is reported.
pub fn domination_from_letters(
    letters: &[Matrix2<f64>],
    l_max: usize,
    window: usize,
) -> Result<DominationEstimate, AnalysisError> {
    let w = window.max(1);
    let need = 4 * w + l_max + 1;
    if letters.len() < need {
        return Err(AnalysisError::InvalidInput(format!("{} letters, need at least {need}", letters.len())));
    }
    let lo = 2 * w;
    let hi = letters.len() - 2 * w - l_max;
    let mut fs = Vec::with_capacity(hi - lo + l_max + 1);
    let mut gs = Vec::with_capacity(hi - lo + l_max + 1);
    let mut min_gap = f64::INFINITY;
    let mut change: f64 = 0.0;
    for i in lo..=hi + l_max {
        let (f, g, gap) = bundles(letters, i, w)?;
        let (f2, g2, _) = bundles(letters, i, 2 * w)?;
        change = change.max(angle_between(&f, &f2)).max(angle_between(&g, &g2));
        min_gap = min_gap.min(gap);
        if angle_between(&f, &g) < 1e-12 {
            return Err(AnalysisError::DegenerateBundle(format!("F and G coincide at position {i}")));
        }
        fs.push(f);
        gs.push(g);
    }
    let mut ratios = Vec::with_capacity(l_max);
    for l in 1..=l_max {
        let mut worst: f64 = 0.0;
        for i in lo..=hi {
            let a = product(&letters[i..i + l]);
            let inv = a.try_inverse().ok_or_else(|| AnalysisError::DegenerateBundle(format!("singular product at {i}")))?;
            let f = &fs[i - lo];
            let g = &gs[i + l - lo];
            worst = worst.max((a * f).norm() * (inv * g).norm());
        }
        ratios.push(worst);
    }
    let diagnostic = if min_gap < 1.0 + 1e-5 {
        Some(format!("singular gap {min_gap} too small to resolve the bundles"))
    } else if change > BUNDLE_TOL {
        Some(format!("bundles move by {change:.3e} rad when the window doubles"))
    } else {
        None
    };
    let l = if diagnostic.is_none() { ratios.iter().position(|&r| r < 0.5).map(|k| k + 1) } else { None };
    let worst_ratio = match l {
        Some(l) => ratios[l - 1],
        None => *ratios.last().unwrap_or(&f64::INFINITY),
    };
    Ok(DominationEstimate {
        l,
        worst_ratio,
        ratios,
        f_angles: fs.iter().map(|v| v[1].atan2(v[0])).collect(),
        g_angles: gs.iter().map(|v| v[1].atan2(v[0])).collect(),
        bundle_change: change,
        min_gap,
        window: w,
        diagnostic,
    })
}

/// One cocycle letter per time unit along an orbit, each integrated from the
/// identity.
pub fn cocycle_letters(
    scenario: &Scenario,
    state: &UnitTangentState,
    units: usize,
    step: f64,
) -> Result<Vec<Matrix2<f64>>, AnalysisError> {
    let (n, h) = schedule(1.0, step);
    let mut current = *state;
    let mut out = Vec::with_capacity(units);
    for k in 0..units {
        let next = advance(scenario, CoupledState::start(current), n, h);
        if !next.t.iter().all(|x| x.is_finite()) {
            return Err(AnalysisError::Blowup { time: k as f64 });
        }
        out.push(next.t);
        current = next.state;
    }
    Ok(out)
}

/// One letter per time unit for an abstract generator `A(t)`.
pub fn generator_letters(a: impl Fn(f64) -> Matrix2<f64>, units: usize, step: f64) -> Vec<Matrix2<f64>> {
    (0..units)
        .map(|k| {
            let shifted = |t: f64| a(t + k as f64);
            *integrate_generator(shifted, 1.0, step).end().0
        })
        .collect()
}

/// Domination estimate along the orbit of `state`.
pub fn domination_estimator(
    scenario: &Scenario,
    state: &UnitTangentState,
    l_max: usize,
    window: usize,
    step: f64,
) -> Result<DominationEstimate, AnalysisError> {
    let units = 4 * window.max(1) + l_max + 1 + 8;
    let letters = cocycle_letters(scenario, state, units, step)?;
    domination_from_letters(&letters, l_max, window)
}
