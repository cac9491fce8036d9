//! Conformally symplectic linear algebra.
//!
//! A real `2n × 2n` matrix `M` is conformally symplectic with factor `mu > 0`
//! when `Mᵀ J M = mu J`, with `J = [[0, -I], [I, 0]]`. This module validates
//! such matrices, pairs their eigenvalues, builds the structure-preserving
//! rotations used to perturb them, and runs the finite searches on periodic
//! linear systems (domination, complex eigenvalues, homotheties).
//!
//! Indices are zero-based throughout: coordinate `k` is conjugate to
//! `(k + n) mod 2n`.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Complex, DMatrix};
use serde::Serialize;
use thiserror::Error;

/// Default margin around the unit circle inside which an eigenvalue counts as
/// non-hyperbolic.
pub const HYPERBOLICITY_TOL: f64 = 1e-9;

/// Default relative tolerance on `|λλ' - mu| / mu` for eigenvalue pairing.
pub const PAIRING_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsError {
    #[error("matrix is {rows}x{cols}, expected a square matrix")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix dimension {0} is odd")]
    OddDimension(usize),
    #[error("matrix is singular (|det| = {det:e})")]
    Singular { det: f64 },
    #[error("matrix is not conformally symplectic: residual {residual:e} > {tol:e} (mu = {mu})")]
    NotConformal { residual: f64, tol: f64, mu: f64 },
    #[error("not infinitesimally conformally symplectic: residual {residual:e} > {tol:e}")]
    NotInfinitesimallyCs { residual: f64, tol: f64 },
    #[error("eigenvalue pairing failed: worst |λλ' - mu| / mu = {residual:e}")]
    PairingFailure { residual: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("rotation plane needs two distinct indices, got ({0}, {1})")]
    DegeneratePlane(usize, usize),
    #[error("split is not invariant at point {point}: deviation {deviation:e}")]
    NotInvariantSplit { point: usize, deviation: f64 },
    #[error("split bases do not span the space: {0}")]
    InvalidSplit(String),
    #[error("no transition supplied for ({0}, {1})")]
    MissingTransition(usize, usize),
    #[error("matrix does not preserve orientation (det = {0})")]
    NotOrientationPreserving(f64),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
}

/// The canonical `2n × 2n` matrix `[[0, -I], [I, 0]]`.
pub fn canonical_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = -1.0;
        j[(n + i, i)] = 1.0;
    }
    j
}

fn half_dim(m: &DMatrix<f64>) -> Result<usize, CsError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(CsError::NotSquare { rows, cols });
    }
    if rows % 2 != 0 || rows == 0 {
        return Err(CsError::OddDimension(rows));
    }
    Ok(rows / 2)
}

/// Scale used to make structure residuals relative: rounding in `MᵀJM` grows
/// with the squared entry size.
fn residual_scale(m: &DMatrix<f64>) -> f64 {
    let n2 = m.nrows() as f64;
    (m.norm_squared() / n2).max(1.0)
}

/// A conformally symplectic matrix together with its recovered factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CsMatrix {
    entries: DMatrix<f64>,
    mu: f64,
    residual: f64,
    tol: f64,
}

impl CsMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Relative structure residual `max|MᵀJM - mu J| / max(1, ‖M‖²_F / 2n)`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Half dimension `n`.
    pub fn n(&self) -> usize {
        self.entries.nrows() / 2
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn identity(n: usize) -> Self {
        CsMatrix { entries: DMatrix::identity(2 * n, 2 * n), mu: 1.0, residual: 0.0, tol: 0.0 }
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// Inverse, with factor `1/mu`.
    pub fn inverse(&self) -> CsMatrix {
        // M⁻¹ = -J Mᵀ J / mu
        let j = canonical_j(self.n());
        let inv = -(&j * self.entries.transpose() * &j) / self.mu;
        CsMatrix { entries: inv, mu: 1.0 / self.mu, residual: self.residual, tol: self.tol }
    }

    /// Matrix product `self · other`; factors multiply.
    pub fn compose(&self, other: &CsMatrix) -> Result<CsMatrix, CsError> {
        if self.dim() != other.dim() {
            return Err(CsError::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        let entries = &self.entries * &other.entries;
        let mu = self.mu * other.mu;
        let residual = structure_residual(&entries, mu);
        Ok(CsMatrix { entries, mu, residual, tol: self.tol.max(other.tol) })
    }

    pub fn powi(&self, k: usize) -> CsMatrix {
        let mut acc = CsMatrix::identity(self.n());
        for _ in 0..k {
            acc = self.compose(&acc).expect("same dimension");
        }
        acc
    }
}

fn structure_residual(m: &DMatrix<f64>, mu: f64) -> f64 {
    let n = m.nrows() / 2;
    let j = canonical_j(n);
    let diff = m.transpose() * &j * m - &j * mu;
    diff.amax() / residual_scale(m)
}

/// Least-squares factor of `MᵀJM ≈ mu J`: `mu = ⟨MᵀJM, J⟩_F / ⟨J, J⟩_F`.
pub fn recover_mu(m: &DMatrix<f64>) -> Result<f64, CsError> {
    let n = half_dim(m)?;
    let j = canonical_j(n);
    let form = m.transpose() * &j * m;
    Ok(form.dot(&j) / (2 * n) as f64)
}

/// Check that `m` is conformally symplectic and recover its factor.
pub fn validate_cs(m: &DMatrix<f64>, tol: f64) -> Result<CsMatrix, CsError> {
    half_dim(m)?;
    let det = m.determinant();
    if !det.is_finite() || det.abs() <= tol {
        return Err(CsError::Singular { det });
    }
    let mu = recover_mu(m)?;
    let residual = structure_residual(m, mu);
    if !(mu > 0.0) || !(residual <= tol) {
        return Err(CsError::NotConformal { residual, tol, mu });
    }
    Ok(CsMatrix { entries: m.clone(), mu, residual, tol })
}

/// One matched eigenvalue pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenPair {
    pub first: Complex<f64>,
    pub second: Complex<f64>,
    /// `|first · second - mu|`.
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pairing {
    pub mu: f64,
    pub pairs: Vec<EigenPair>,
    /// Largest absolute pairing defect.
    pub max_defect: f64,
    /// No eigenvalue modulus lies in `[1 - tol, 1 + tol]`.
    pub hyperbolic: bool,
}

impl Pairing {
    pub fn eigenvalues(&self) -> impl Iterator<Item = Complex<f64>> + '_ {
        self.pairs.iter().flat_map(|p| [p.first, p.second])
    }
}

/// Match eigenvalues of `m` into pairs with product `mu`.
pub fn eigen_pairing(m: &CsMatrix) -> Result<Pairing, CsError> {
    eigen_pairing_with(m, PAIRING_TOL, HYPERBOLICITY_TOL)
}

/// Greedy global matching: candidate pairs are taken in increasing order of
/// `|λ_i λ_j - mu|`. Complex conjugate candidates have equal cost, so
/// conjugate eigenvalues end up in conjugate pairs.
pub fn eigen_pairing_with(m: &CsMatrix, pairing_tol: f64, band: f64) -> Result<Pairing, CsError> {
    let eig: Vec<Complex<f64>> = m.entries.clone().complex_eigenvalues().iter().copied().collect();
    let mu = m.mu;
    let k = eig.len();
    let mut candidates = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let cost = (eig[i] * eig[j] - mu).norm();
            candidates.push((cost, i, j));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used = vec![false; k];
    let mut pairs = Vec::with_capacity(k / 2);
    for (cost, i, j) in candidates {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        let (a, b) = if eig[i].norm() <= eig[j].norm() { (eig[i], eig[j]) } else { (eig[j], eig[i]) };
        pairs.push(EigenPair { first: a, second: b, defect: cost });
    }
    pairs.sort_by(|p, q| p.first.norm().total_cmp(&q.first.norm()).then(p.first.im.total_cmp(&q.first.im)));
    let max_defect = pairs.iter().map(|p| p.defect).fold(0.0, f64::max);
    if !(max_defect <= pairing_tol * mu) {
        return Err(CsError::PairingFailure { residual: max_defect / mu });
    }
    let hyperbolic = eig.iter().all(|l| (l.norm() - 1.0).abs() > band);
    Ok(Pairing { mu, pairs, max_defect, hyperbolic })
}

/// Index conjugate to `k` in dimension `2n`.
pub fn conjugate_index(k: usize, n: usize) -> usize {
    (k + n) % (2 * n)
}

/// Plane rotation `R^θ_{i,j}` of `R^{2n}`: identity except
/// `R[i][i] = R[j][j] = cos θ`, `R[i][j] = -sin θ`, `R[j][i] = sin θ`.
pub fn rotation(theta: f64, i: usize, j: usize, n: usize) -> Result<DMatrix<f64>, CsError> {
    let dim = 2 * n;
    for index in [i, j] {
        if index >= dim {
            return Err(CsError::IndexOutOfRange { index, dim });
        }
    }
    if i == j {
        return Err(CsError::DegeneratePlane(i, j));
    }
    let mut r = DMatrix::identity(dim, dim);
    let (s, c) = theta.sin_cos();
    r[(i, i)] = c;
    r[(j, j)] = c;
    r[(i, j)] = -s;
    r[(j, i)] = s;
    Ok(r)
}

/// Symplectic product `R^θ_{ī,j̄} · R^θ_{i,j}`.
///
/// The conjugate plane is taken with its indices in increasing order, so the
/// `-sin θ` entry always sits in the row of the smaller index. With that
/// ordering the product is the unitary rotation of the `(i, j)` complex plane
/// for every index pair, including pairs that mix a position and a momentum
/// coordinate.
pub fn paired_rotation(theta: f64, i: usize, j: usize, n: usize) -> Result<DMatrix<f64>, CsError> {
    let first = rotation(theta, i, j, n)?;
    let (a, b) = (conjugate_index(i, n), conjugate_index(j, n));
    let second = rotation(theta, a.min(b), a.max(b), n)?;
    Ok(second * first)
}

/// Product of a word, rightmost letter applied first:
/// `word[0] · word[1] · … · word[k-1]`. The empty word is the identity with
/// factor one.
pub fn word_product(word: &[CsMatrix], dim: usize) -> Result<CsMatrix, CsError> {
    if !dim.is_multiple_of(2) {
        return Err(CsError::OddDimension(dim));
    }
    let mut acc = CsMatrix::identity(dim / 2);
    for letter in word.iter().rev() {
        if letter.dim() != dim {
            return Err(CsError::DimensionMismatch { expected: dim, found: letter.dim() });
        }
        acc = letter.compose(&acc)?;
    }
    Ok(acc)
}

/// Periodic linear system over a finite set of base points.
///
/// Point `x` carries the letter `A_x : E_x -> E_{f(x)}` and the dynamics `f` is
/// a permutation given by `successor`.
#[derive(Debug, Clone)]
pub struct PeriodicLinearSystem {
    letters: Vec<CsMatrix>,
    successor: Vec<usize>,
    transitions: BTreeMap<(usize, usize), Vec<CsMatrix>>,
}

impl PeriodicLinearSystem {
    pub fn new(letters: Vec<CsMatrix>, successor: Vec<usize>) -> Result<Self, CsError> {
        if letters.is_empty() {
            return Err(CsError::InvalidSystem("no base points".into()));
        }
        if letters.len() != successor.len() {
            return Err(CsError::InvalidSystem(format!(
                "{} letters for {} points",
                letters.len(),
                successor.len()
            )));
        }
        let dim = letters[0].dim();
        if let Some(bad) = letters.iter().find(|l| l.dim() != dim) {
            return Err(CsError::DimensionMismatch { expected: dim, found: bad.dim() });
        }
        let mut seen = vec![false; successor.len()];
        for &s in &successor {
            if s >= successor.len() || seen[s] {
                return Err(CsError::InvalidSystem("successor map is not a permutation".into()));
            }
            seen[s] = true;
        }
        Ok(PeriodicLinearSystem { letters, successor, transitions: BTreeMap::new() })
    }

    /// A single periodic orbit visiting the letters in order.
    pub fn cycle(letters: Vec<CsMatrix>) -> Result<Self, CsError> {
        let p = letters.len();
        Self::new(letters, (0..p).map(|i| (i + 1) % p.max(1)).collect())
    }

    /// Several fixed points, one letter each.
    pub fn fixed_points(letters: Vec<CsMatrix>) -> Result<Self, CsError> {
        let p = letters.len();
        Self::new(letters, (0..p).collect())
    }

    pub fn with_transition(mut self, from: usize, to: usize, word: Vec<CsMatrix>) -> Result<Self, CsError> {
        for p in [from, to] {
            if p >= self.len() {
                return Err(CsError::IndexOutOfRange { index: p, dim: self.len() });
            }
        }
        if let Some(bad) = word.iter().find(|l| l.dim() != self.dim()) {
            return Err(CsError::DimensionMismatch { expected: self.dim(), found: bad.dim() });
        }
        self.transitions.insert((from, to), word);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.letters[0].dim()
    }

    pub fn letter(&self, x: usize) -> &CsMatrix {
        &self.letters[x]
    }

    pub fn successor(&self, x: usize) -> usize {
        self.successor[x]
    }

    pub fn period(&self, x: usize) -> usize {
        let mut p = 1;
        let mut y = self.successor[x];
        while y != x {
            y = self.successor[y];
            p += 1;
        }
        p
    }

    /// The word `[A(f^{p-1}x), …, A(x)]`.
    pub fn period_word(&self, x: usize) -> Vec<CsMatrix> {
        let p = self.period(x);
        let mut word = Vec::with_capacity(p);
        let mut y = x;
        for _ in 0..p {
            word.push(self.letters[y].clone());
            y = self.successor[y];
        }
        word.reverse();
        word
    }

    /// Product of the period word at `x`.
    pub fn period_matrix(&self, x: usize) -> CsMatrix {
        word_product(&self.period_word(x), self.dim()).expect("letters share a dimension")
    }

    /// `A^l(x) = A(f^{l-1}x) ⋯ A(x)` and the end point `f^l(x)`.
    pub fn iterate(&self, x: usize, l: usize) -> (DMatrix<f64>, usize) {
        let mut m = DMatrix::identity(self.dim(), self.dim());
        let mut y = x;
        for _ in 0..l {
            m = self.letters[y].entries() * m;
            y = self.successor[y];
        }
        (m, y)
    }

    pub fn transition(&self, from: usize, to: usize) -> Result<&[CsMatrix], CsError> {
        self.transitions
            .get(&(from, to))
            .map(Vec::as_slice)
            .ok_or(CsError::MissingTransition(from, to))
    }

    /// One point from every cycle of `f`, in increasing order.
    pub fn cycle_representatives(&self) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        let mut reps = Vec::new();
        for x in 0..self.len() {
            if seen[x] {
                continue;
            }
            reps.push(x);
            let mut y = x;
            loop {
                seen[y] = true;
                y = self.successor[y];
                if y == x {
                    break;
                }
            }
        }
        reps
    }
}

/// Per-point bases of a splitting `E = F ⊕ G` (columns span each bundle).
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub f: Vec<DMatrix<f64>>,
    pub g: Vec<DMatrix<f64>>,
}

impl SplitSpec {
    pub fn constant(f: DMatrix<f64>, g: DMatrix<f64>, points: usize) -> Self {
        SplitSpec { f: vec![f; points], g: vec![g; points] }
    }

    /// Coordinate split: `F` spanned by the axes in `f_axes`, `G` by `g_axes`.
    pub fn from_axes(f_axes: &[usize], g_axes: &[usize], dim: usize, points: usize) -> Result<Self, CsError> {
        let basis = |axes: &[usize]| -> Result<DMatrix<f64>, CsError> {
            let mut b = DMatrix::zeros(dim, axes.len());
            for (c, &a) in axes.iter().enumerate() {
                if a >= dim {
                    return Err(CsError::IndexOutOfRange { index: a, dim });
                }
                b[(a, c)] = 1.0;
            }
            Ok(b)
        };
        Ok(Self::constant(basis(f_axes)?, basis(g_axes)?, points))
    }
}

fn orthonormal_basis(b: &DMatrix<f64>) -> Result<DMatrix<f64>, CsError> {
    let svd = b.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax.max(1e-300)) {
        return Err(CsError::InvalidSplit("basis is rank deficient".into()));
    }
    Ok(svd.u.expect("requested"))
}

/// Sine of the largest principal angle between `span(image)` and `span(target)`
/// (both orthonormal).
fn subspace_deviation(image: &DMatrix<f64>, target_on: &DMatrix<f64>) -> f64 {
    let proj = target_on * (target_on.transpose() * image);
    let resid = image - proj;
    resid.svd(false, false).singular_values.max()
}

/// Outcome of an `l`-domination check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominationCheck {
    pub l: usize,
    pub dominated: bool,
    /// Largest `‖A^l(x)|_F‖ · ‖A^{-l}(f^l x)|_G‖` over base points.
    pub worst_ratio: f64,
}

/// Angle tolerance for the invariance precondition of `l_domination_test`.
pub const INVARIANCE_TOL: f64 = 1e-8;

/// Test `‖A^l(x)|_F‖ · ‖A^{-l}(f^l(x))|_G‖ < 1/2` at every base point.
pub fn l_domination_test(
    system: &PeriodicLinearSystem,
    split: &SplitSpec,
    l: usize,
) -> Result<DominationCheck, CsError> {
    let dim = system.dim();
    let pts = system.len();
    if split.f.len() != pts || split.g.len() != pts {
        return Err(CsError::InvalidSplit(format!("split given on {} points, system has {pts}", split.f.len())));
    }
    let mut f_on = Vec::with_capacity(pts);
    let mut g_on = Vec::with_capacity(pts);
    for x in 0..pts {
        let (f, g) = (&split.f[x], &split.g[x]);
        if f.nrows() != dim || g.nrows() != dim || f.ncols() + g.ncols() != dim {
            return Err(CsError::InvalidSplit(format!("bundle dimensions do not add up at point {x}")));
        }
        let mut both = DMatrix::zeros(dim, dim);
        both.columns_mut(0, f.ncols()).copy_from(f);
        both.columns_mut(f.ncols(), g.ncols()).copy_from(g);
        if both.clone().svd(false, false).rank(1e-10) < dim {
            return Err(CsError::InvalidSplit(format!("F and G do not span at point {x}")));
        }
        f_on.push(orthonormal_basis(f)?);
        g_on.push(orthonormal_basis(g)?);
    }
    for x in 0..pts {
        let y = system.successor(x);
        let a = system.letter(x).entries();
        for (bundle, name) in [(&f_on, "F"), (&g_on, "G")] {
            let image = a * &bundle[x];
            let image_on = orthonormal_basis(&image)?;
            let deviation = subspace_deviation(&image_on, &bundle[y]);
            if deviation > INVARIANCE_TOL {
                let _ = name;
                return Err(CsError::NotInvariantSplit { point: x, deviation });
            }
        }
    }
    let mut worst: f64 = 0.0;
    for x in 0..pts {
        let (al, y) = system.iterate(x, l);
        let forward = (&al * &f_on[x]).svd(false, false).singular_values.max();
        let inv = al.try_inverse().ok_or(CsError::Singular { det: 0.0 })?;
        let backward = (&inv * &g_on[y]).svd(false, false).singular_values.max();
        worst = worst.max(forward * backward);
    }
    Ok(DominationCheck { l, dominated: worst < 0.5, worst_ratio: worst })
}

/// Trace of `R^φ M` for a 2×2 `M`.
fn rotated_trace(m: &DMatrix<f64>, phi: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    c * (m[(0, 0)] + m[(1, 1)]) + s * (m[(0, 1)] - m[(1, 0)])
}

/// Search `s` on the grid `{k · step} ∩ [-1, 1]` in order of increasing `|s|`
/// (positive before negative) for which `R^{sα} ∘ M` has non-real eigenvalues.
pub fn mane_complexify(m: &CsMatrix, alpha: f64, step: f64) -> Result<Option<f64>, CsError> {
    if m.dim() != 2 {
        return Err(CsError::DimensionMismatch { expected: 2, found: m.dim() });
    }
    let e = m.entries();
    let det = e[(0, 0)] * e[(1, 1)] - e[(0, 1)] * e[(1, 0)];
    if !(det > 0.0) {
        return Err(CsError::NotOrientationPreserving(det));
    }
    let kmax = (1.0 / step + 1e-9).floor() as i64;
    for k in 0..=kmax {
        for sign in [1i64, -1] {
            if k == 0 && sign < 0 {
                continue;
            }
            let s = (sign * k) as f64 * step;
            let tr = rotated_trace(e, s * alpha);
            if tr * tr - 4.0 * det < 0.0 {
                return Ok(Some(s));
            }
        }
    }
    Ok(None)
}

/// Angle in `[0, π/2]` between the two real eigendirections of a 2×2 matrix,
/// or `None` when the eigenvalues are not real and distinct.
pub fn eigenspace_angle(m: &DMatrix<f64>) -> Option<f64> {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let tr = a + d;
    let disc = tr * tr - 4.0 * (a * d - b * c);
    if disc <= 0.0 {
        return None;
    }
    let dirs: Vec<[f64; 2]> = [0.5 * (tr + disc.sqrt()), 0.5 * (tr - disc.sqrt())]
        .iter()
        .map(|&l| {
            // null vector of [[a-l, b], [c, d-l]]
            let r1 = [b, l - a];
            let r2 = [l - d, c];
            if r1[0].hypot(r1[1]) >= r2[0].hypot(r2[1]) { r1 } else { r2 }
        })
        .collect();
    let dot = dirs[0][0] * dirs[1][0] + dirs[0][1] * dirs[1][1];
    let norm = dirs[0][0].hypot(dirs[0][1]) * dirs[1][0].hypot(dirs[1][1]);
    Some((dot.abs() / norm).min(1.0).acos())
}

/// `B̃_t = R^{tα}_{j̄, k̄+1} ∘ R^{tα}_{j, k+1} ∘ B`, the structure-preserving
/// isotopy mixing the eigendirections `j` and `k + 1`.
pub fn mixing_isotopy(b: &CsMatrix, j: usize, k: usize, alpha: f64, t: f64) -> Result<CsMatrix, CsError> {
    let n = b.n();
    let rot = paired_rotation(t * alpha, j, k + 1, n)?;
    let entries = rot * b.entries();
    let residual = structure_residual(&entries, b.mu());
    Ok(CsMatrix { entries, mu: b.mu(), residual, tol: b.tol() })
}

/// Bounds for the homothety search.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HomothetyBounds {
    /// Largest power `a_i` of any period word.
    pub max_power: usize,
    /// Largest number `m` of (point, power) segments in a word.
    pub max_segments: usize,
}

impl HomothetyBounds {
    pub fn new(max_power: usize) -> Self {
        HomothetyBounds { max_power, max_segments: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HomothetyKind {
    Contraction,
    Dilation,
    /// `|s| = 1` within tolerance: an isometric homothety `±I`.
    Isometric,
}

/// A word `W(ι, a) = [t^{i_1,i_m}][M(x_{i_m})]^{a_m} ⋯ [t^{i_2,i_1}][M(x_{i_1})]^{a_1}`
/// whose product is close to a multiple of the identity.
#[derive(Debug, Clone, Serialize)]
pub struct HomotheticWord {
    /// `(point, power)` segments in application order (first applied first).
    pub segments: Vec<(usize, usize)>,
    /// Number of letters in the expanded word.
    pub size: usize,
    pub scalar: f64,
    /// `‖P - sI‖_F / ‖P‖_F`.
    pub relative_defect: f64,
    pub kind: HomothetyKind,
    pub mu: f64,
    #[serde(skip)]
    pub product: CsMatrix,
}

/// Expand and multiply the word `W(ι, a)` for the given segments.
pub fn transition_word(
    system: &PeriodicLinearSystem,
    segments: &[(usize, usize)],
) -> Result<(CsMatrix, usize), CsError> {
    let mut product = CsMatrix::identity(system.dim() / 2);
    let mut size = 0;
    let m = segments.len();
    for (idx, &(point, power)) in segments.iter().enumerate() {
        let period = system.period_matrix(point);
        product = period.powi(power).compose(&product)?;
        size += power * system.period(point);
        if m > 1 {
            let next = segments[(idx + 1) % m].0;
            let word = system.transition(point, next)?;
            product = word_product(word, system.dim())?.compose(&product)?;
            size += word.len();
        }
    }
    Ok((product, size))
}

fn homothety_fit(p: &DMatrix<f64>) -> (f64, f64) {
    let dim = p.nrows() as f64;
    let s = p.trace() / dim;
    let resid = p - DMatrix::identity(p.nrows(), p.ncols()) * s;
    let norm = p.norm();
    (s, if norm > 0.0 { resid.norm() / norm } else { f64::INFINITY })
}

/// Bounded breadth-first search for a homothetic word.
///
/// Words are enumerated by number of segments, then by total power, then
/// lexicographically, so the first hit is a shortest one in that order. With
/// every factor equal to one the only reachable homotheties are `±I`; those
/// are reported with kind [`HomothetyKind::Isometric`].
pub fn homothety_search(
    system: &PeriodicLinearSystem,
    eps: f64,
    bounds: HomothetyBounds,
) -> Result<Option<HomotheticWord>, CsError> {
    let reps = system.cycle_representatives();
    let max_m = bounds.max_segments.max(1);
    for m in 1..=max_m {
        // transitions needed by every multi-segment word must exist up front
        if m > 1 {
            for &a in &reps {
                for &b in &reps {
                    system.transition(a, b)?;
                }
            }
        }
        for total in m..=m * bounds.max_power {
            let mut queue: VecDeque<Vec<(usize, usize)>> = VecDeque::new();
            queue.push_back(Vec::new());
            while let Some(prefix) = queue.pop_front() {
                let used: usize = prefix.iter().map(|s| s.1).sum();
                if prefix.len() == m {
                    if used != total {
                        continue;
                    }
                    if let Some(hit) = evaluate_word(system, &prefix, eps)? {
                        return Ok(Some(hit));
                    }
                    continue;
                }
                let remaining_slots = m - prefix.len();
                for &point in &reps {
                    for power in 1..=bounds.max_power {
                        let rest = total as i64 - (used + power) as i64;
                        let slots_after = remaining_slots as i64 - 1;
                        if rest < slots_after || rest > slots_after * bounds.max_power as i64 {
                            continue;
                        }
                        let mut next = prefix.clone();
                        next.push((point, power));
                        queue.push_back(next);
                    }
                }
            }
        }
    }
    Ok(None)
}

fn evaluate_word(
    system: &PeriodicLinearSystem,
    segments: &[(usize, usize)],
    eps: f64,
) -> Result<Option<HomotheticWord>, CsError> {
    let (product, size) = transition_word(system, segments)?;
    let (scalar, relative_defect) = homothety_fit(product.entries());
    if relative_defect > eps {
        return Ok(None);
    }
    let modulus = scalar.abs();
    let kind = if (modulus - 1.0).abs() <= eps.max(1e-9) {
        HomothetyKind::Isometric
    } else if modulus < 1.0 {
        HomothetyKind::Contraction
    } else {
        HomothetyKind::Dilation
    };
    Ok(Some(HomotheticWord {
        segments: segments.to_vec(),
        size,
        scalar,
        relative_defect,
        kind,
        mu: product.mu(),
        product,
    }))
}

/// Block decomposition `Y = [[β, γ], [α, δ]]` of an infinitesimally
/// conformally symplectic matrix, `δ = vI - βᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfinitesimalCs {
    pub entries: DMatrix<f64>,
    pub v: f64,
    pub residual: f64,
    pub beta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    /// `max|α - αᵀ|`.
    pub alpha_asymmetry: f64,
    /// `max|γ - γᵀ|`.
    pub gamma_asymmetry: f64,
    /// `max|δ - (vI - βᵀ)|`.
    pub delta_defect: f64,
}

/// Check `YᵀJ + JY = vJ`, recovering `v` by least squares.
pub fn infinitesimal_cs_check(y: &DMatrix<f64>, tol: f64) -> Result<InfinitesimalCs, CsError> {
    let n = half_dim(y)?;
    let j = canonical_j(n);
    let form = y.transpose() * &j + &j * y;
    let v = form.dot(&j) / (2 * n) as f64;
    let scale = (y.amax()).max(1.0);
    let residual = (form - &j * v).amax() / scale;
    if !(residual <= tol) {
        return Err(CsError::NotInfinitesimallyCs { residual, tol });
    }
    let beta = y.view((0, 0), (n, n)).into_owned();
    let gamma = y.view((0, n), (n, n)).into_owned();
    let alpha = y.view((n, 0), (n, n)).into_owned();
    let delta = y.view((n, n), (n, n)).into_owned();
    let alpha_asymmetry = (&alpha - alpha.transpose()).amax();
    let gamma_asymmetry = (&gamma - gamma.transpose()).amax();
    let delta_defect = (delta - (DMatrix::identity(n, n) * v - beta.transpose())).amax();
    Ok(InfinitesimalCs {
        entries: y.clone(),
        v,
        residual,
        beta,
        gamma,
        alpha,
        alpha_asymmetry,
        gamma_asymmetry,
        delta_defect,
    })
}
