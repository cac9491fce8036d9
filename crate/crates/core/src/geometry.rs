//! Conformal metrics `g = e^{2f}(dx² + dy²)` on the unit torus, closed 1-forms
//! `γ = c1 dx + c2 dy + dU`, and the derived connection data.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Value, gradient and Hessian of a scalar function at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

/// One Fourier mode `cos_coef · cos θ + sin_coef · sin θ` with
/// `θ = 2π(kx·x + ky·y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub kx: i32,
    pub ky: i32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl TrigTerm {
    pub fn cos(kx: i32, ky: i32, coef: f64) -> Self {
        TrigTerm { kx, ky, cos: coef, sin: 0.0 }
    }

    pub fn sin(kx: i32, ky: i32, coef: f64) -> Self {
        TrigTerm { kx, ky, cos: 0.0, sin: coef }
    }
}

/// Trigonometric polynomial on the unit torus.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrigPoly {
    pub terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn zero() -> Self {
        TrigPoly::default()
    }

    pub fn new(terms: Vec<TrigTerm>) -> Self {
        TrigPoly { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.cos == 0.0 && t.sin == 0.0)
    }

    pub fn jet(&self, p: [f64; 2]) -> Jet {
        trig_jet(&self.terms, p)
    }

    pub fn value(&self, p: [f64; 2]) -> f64 {
        self.jet(p).value
    }

    /// Largest absolute coefficient.
    pub fn max_coefficient(&self) -> f64 {
        self.terms.iter().map(|t| t.cos.abs().max(t.sin.abs())).fold(0.0, f64::max)
    }
}

/// Function class for conformal exponents and potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarField {
    Trig { terms: Vec<TrigTerm> },
    /// `scale · (x² + y²) / 2`; not periodic, meant for local chart tests.
    Quadratic { scale: f64 },
}

impl ScalarField {
    pub fn zero() -> Self {
        ScalarField::Trig { terms: Vec::new() }
    }

    pub fn trig(poly: TrigPoly) -> Self {
        ScalarField::Trig { terms: poly.terms }
    }

    pub fn jet(&self, p: [f64; 2]) -> Jet {
        match self {
            ScalarField::Trig { terms } => trig_jet(terms, p),
            ScalarField::Quadratic { scale } => Jet {
                value: 0.5 * scale * (p[0] * p[0] + p[1] * p[1]),
                grad: [scale * p[0], scale * p[1]],
                hess: [[*scale, 0.0], [0.0, *scale]],
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarField::Trig { terms } => terms.iter().all(|t| t.cos == 0.0 && t.sin == 0.0),
            ScalarField::Quadratic { scale } => *scale == 0.0,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, ScalarField::Trig { .. })
    }
}

fn trig_jet(terms: &[TrigTerm], p: [f64; 2]) -> Jet {
    let mut jet = Jet::default();
    for t in terms {
        let w = [TAU * t.kx as f64, TAU * t.ky as f64];
        let (s, c) = (w[0] * p[0] + w[1] * p[1]).sin_cos();
        let val = t.cos * c + t.sin * s;
        let dval = -t.cos * s + t.sin * c;
        jet.value += val;
        for i in 0..2 {
            jet.grad[i] += w[i] * dval;
            for j in 0..2 {
                jet.hess[i][j] -= w[i] * w[j] * val;
            }
        }
    }
    jet
}

impl From<TrigPoly> for ScalarField {
    fn from(p: TrigPoly) -> Self {
        ScalarField::trig(p)
    }
}

/// Point of the torus chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub x: f64,
    pub y: f64,
}

impl ChartPoint {
    /// Canonical representative in `[0, 1)²`.
    pub fn new(x: f64, y: f64) -> Self {
        ChartPoint { x: wrap_unit(x), y: wrap_unit(y) }
    }

    pub fn coords(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<ChartPoint> for [f64; 2] {
    fn from(p: ChartPoint) -> Self {
        [p.x, p.y]
    }
}

fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 { 0.0 } else { r }
}

/// Christoffel symbols `Γ^k_{ij}`, stored as `g[k][i][j]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Christoffel {
    pub g: [[[f64; 2]; 2]; 2],
}

impl Christoffel {
    /// `Γ^k(a, b) = Γ^k_{ij} a^i b^j`.
    pub fn contract(&self, a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    *o += self.g[k][i][j] * a[i] * b[j];
                }
            }
        }
        out
    }
}

/// `g = e^{2f} δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalMetric {
    pub f: ScalarField,
}

impl ConformalMetric {
    pub fn flat() -> Self {
        ConformalMetric { f: ScalarField::zero() }
    }

    pub fn conformal(f: impl Into<ScalarField>) -> Self {
        ConformalMetric { f: f.into() }
    }

    pub fn is_flat(&self) -> bool {
        self.f.is_zero()
    }

    /// `e^{2f(p)}`.
    pub fn factor(&self, p: [f64; 2]) -> f64 {
        (2.0 * self.f.jet(p).value).exp()
    }

    pub fn inner(&self, p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
        self.factor(p) * (a[0] * b[0] + a[1] * b[1])
    }

    pub fn norm(&self, p: [f64; 2], a: [f64; 2]) -> f64 {
        self.inner(p, a, a).sqrt()
    }

    pub fn christoffel(&self, p: [f64; 2]) -> Christoffel {
        christoffel_from_jet(&self.f.jet(p))
    }

    pub fn gauss_curvature(&self, p: [f64; 2]) -> f64 {
        curvature_from_jet(&self.f.jet(p))
    }
}

pub(crate) fn christoffel_from_jet(jet: &Jet) -> Christoffel {
    let [fx, fy] = jet.grad;
    Christoffel { g: [[[fx, fy], [fy, -fx]], [[-fy, fx], [fx, fy]]] }
}

pub(crate) fn curvature_from_jet(jet: &Jet) -> f64 {
    -(-2.0 * jet.value).exp() * (jet.hess[0][0] + jet.hess[1][1])
}

pub fn christoffel_eval(metric: &ConformalMetric, p: ChartPoint) -> Christoffel {
    metric.christoffel(p.coords())
}

pub fn gauss_curvature(metric: &ConformalMetric, p: ChartPoint) -> f64 {
    metric.gauss_curvature(p.coords())
}

/// `γ = c1 dx + c2 dy + dU`, closed by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormField {
    pub c: [f64; 2],
    pub u: TrigPoly,
}

impl ClosedFormField {
    pub fn zero() -> Self {
        ClosedFormField { c: [0.0; 2], u: TrigPoly::zero() }
    }

    pub fn harmonic(c1: f64, c2: f64) -> Self {
        ClosedFormField { c: [c1, c2], u: TrigPoly::zero() }
    }

    pub fn with_potential(mut self, u: TrigPoly) -> Self {
        self.u = u;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.c == [0.0; 2] && self.u.is_zero()
    }

    /// Components `γ_i` and their chart partials `∂_j γ_i`.
    pub fn jet(&self, p: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let u = self.u.jet(p);
        ([self.c[0] + u.grad[0], self.c[1] + u.grad[1]], u.hess)
    }

    pub fn gamma(&self, p: [f64; 2]) -> [f64; 2] {
        self.jet(p).0
    }

    /// `γ(v)`.
    pub fn apply(&self, p: [f64; 2], v: [f64; 2]) -> f64 {
        let g = self.gamma(p);
        g[0] * v[0] + g[1] * v[1]
    }
}

/// `E`, `γ` and `γ(v)` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub e: [f64; 2],
    pub gamma: [f64; 2],
    pub gamma_v: f64,
}

pub fn field_eval(field: &ClosedFormField, metric: &ConformalMetric, p: ChartPoint, v: [f64; 2]) -> FieldSample {
    let p = p.coords();
    let gamma = field.gamma(p);
    let inv = 1.0 / metric.factor(p);
    FieldSample { e: [inv * gamma[0], inv * gamma[1]], gamma, gamma_v: gamma[0] * v[0] + gamma[1] * v[1] }
}

/// Sample a 1-form on the grid `(i·h, j·h)`, `0 ≤ i, j < n`; `grid[i][j]`.
pub fn sample_form(form: impl Fn([f64; 2]) -> [f64; 2], n: usize, h: f64) -> Vec<Vec<[f64; 2]>> {
    (0..n).map(|i| (0..n).map(|j| form([i as f64 * h, j as f64 * h])).collect()).collect()
}

/// `max |∂γ₂/∂x − ∂γ₁/∂y|` over interior grid points by central differences.
pub fn closedness_residual(grid: &[Vec<[f64; 2]>], h: f64) -> f64 {
    let n = grid.len();
    let mut worst: f64 = 0.0;
    for i in 1..n.saturating_sub(1) {
        let m = grid[i].len();
        for j in 1..m.saturating_sub(1) {
            let d2x = (grid[i + 1][j][1] - grid[i - 1][j][1]) / (2.0 * h);
            let d1y = (grid[i][j + 1][0] - grid[i][j - 1][0]) / (2.0 * h);
            worst = worst.max((d2x - d1y).abs());
        }
    }
    worst
}

/// Surface chart with a thermostat field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub metric: ConformalMetric,
    pub field: ClosedFormField,
}

impl Scenario {
    pub fn new(metric: ConformalMetric, field: ClosedFormField) -> Self {
        Scenario { metric, field }
    }

    /// Flat torus, `E = 0`.
    pub fn flat() -> Self {
        Scenario::new(ConformalMetric::flat(), ClosedFormField::zero())
    }

    /// Flat torus with constant `γ = e dx`.
    pub fn product_torus(e: f64) -> Self {
        Scenario::new(ConformalMetric::flat(), ClosedFormField::harmonic(e, 0.0))
    }

    /// `f = a cos(2πy)` and `γ = c1 dx`. For `a < 0` the line `y = 0` is a
    /// hyperbolic closed orbit of length `e^a`.
    pub fn curved_saddle(a: f64, c1: f64) -> Self {
        Scenario::new(
            ConformalMetric::conformal(TrigPoly::new(vec![TrigTerm::cos(0, 1, a)])),
            ClosedFormField::harmonic(c1, 0.0),
        )
    }

    /// Seeded random conformal scenario with low modes.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = [(1, 0), (0, 1), (1, 1), (1, -1)];
        let mut f_terms = Vec::new();
        let mut u_terms = Vec::new();
        for &(kx, ky) in &modes {
            f_terms.push(TrigTerm { kx, ky, cos: rng.random_range(-0.15..0.15), sin: rng.random_range(-0.15..0.15) });
            u_terms.push(TrigTerm { kx, ky, cos: rng.random_range(-0.04..0.04), sin: rng.random_range(-0.04..0.04) });
        }
        let c = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        Scenario::new(
            ConformalMetric::conformal(TrigPoly::new(f_terms)),
            ClosedFormField { c, u: TrigPoly::new(u_terms) },
        )
    }

    pub fn metric(&self) -> &ConformalMetric {
        &self.metric
    }

    pub fn field(&self) -> &ClosedFormField {
        &self.field
    }

    pub fn with_field(&self, field: ClosedFormField) -> Self {
        Scenario { metric: self.metric.clone(), field }
    }

    /// Everything the flow and the Jacobi generator need at one point.
    pub fn local(&self, p: [f64; 2]) -> LocalGeometry {
        let f = self.metric.f.jet(p);
        let (gamma, dgamma) = self.field.jet(p);
        LocalGeometry {
            conformal: (2.0 * f.value).exp(),
            christoffel: christoffel_from_jet(&f),
            curvature: curvature_from_jet(&f),
            gamma,
            dgamma,
        }
    }
}

/// Pointwise metric and field data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalGeometry {
    /// `e^{2f}`.
    pub conformal: f64,
    pub christoffel: Christoffel,
    pub curvature: f64,
    pub gamma: [f64; 2],
    /// `∂_j γ_i` as `dgamma[i][j]`.
    pub dgamma: [[f64; 2]; 2],
}

impl LocalGeometry {
    pub fn inner(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        self.conformal * (a[0] * b[0] + a[1] * b[1])
    }

    pub fn gamma_of(&self, v: [f64; 2]) -> f64 {
        self.gamma[0] * v[0] + self.gamma[1] * v[1]
    }

    pub fn e_field(&self) -> [f64; 2] {
        [self.gamma[0] / self.conformal, self.gamma[1] / self.conformal]
    }

    /// `(∇_a γ)(b) = a^j b^i (∂_j γ_i − Γ^k_{ji} γ_k)`.
    pub fn covariant_gamma(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let mut term = self.dgamma[i][j];
                for k in 0..2 {
                    term -= self.christoffel.g[k][j][i] * self.gamma[k];
                }
                acc += a[j] * b[i] * term;
            }
        }
        acc
    }
}

/// Registered test scenarios: ten seeded random conformal charts.
pub fn regression_suite() -> Vec<Scenario> {
    (1..=10).map(Scenario::random).collect()
}

/// Levi-Civita derivative `∇_X Y` given the chart partials `dy[k][j] = ∂_j Y^k`.
pub fn levi_civita_derivative(
    metric: &ConformalMetric,
    p: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
    dy: [[f64; 2]; 2],
) -> [f64; 2] {
    let gamma = metric.christoffel(p).contract(x, y);
    let mut out = [0.0; 2];
    for k in 0..2 {
        out[k] = x[0] * dy[k][0] + x[1] * dy[k][1] + gamma[k];
    }
    out
}

/// `∇̂_X Y = ∇_X Y − ⟨X, Y⟩E + γ(Y)X + γ(X)Y`.
pub fn weyl_covariant_derivative(
    metric: &ConformalMetric,
    field: &ClosedFormField,
    p: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
    dy: [[f64; 2]; 2],
) -> [f64; 2] {
    let nabla = levi_civita_derivative(metric, p, x, y, dy);
    let gamma = field.gamma(p);
    let factor = metric.factor(p);
    let e = [gamma[0] / factor, gamma[1] / factor];
    let xy = metric.inner(p, x, y);
    let gx = gamma[0] * x[0] + gamma[1] * x[1];
    let gy = gamma[0] * y[0] + gamma[1] * y[1];
    let mut out = [0.0; 2];
    for k in 0..2 {
        out[k] = nabla[k] - xy * e[k] + gy * x[k] + gx * y[k];
    }
    out
}
