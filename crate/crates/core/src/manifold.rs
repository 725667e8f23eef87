//! Geometry of the manifold of symmetric positive-definite matrices under the
//! affine-invariant metric.
//!
//! Points are [`SpdMatrix`] values and tangent vectors are [`SymMatrix`]
//! values. Every matrix function is evaluated through a symmetric eigenvalue
//! decomposition, `f(P) = U diag(f(λ)) Uᵀ`.
//!
//! ```text
//! exp_P(S) = P^½ Exp(P^-½ S P^-½) P^½
//! log_P(Q) = P^½ Log(P^-½ Q P^-½) P^½
//! d(P, Q)  = ‖Log(P⁻¹Q)‖_F = [Σ log² λ_i(P⁻¹Q)]^½
//! ```

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative Frobenius asymmetry accepted (and repaired) by the constructors.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Validation(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::Validation("empty matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("matrix has non-finite entries".into()));
    }
    let scale = frobenius(m);
    let asym = frobenius(&(m - m.transpose()));
    let rel = if scale > 0.0 { asym / scale } else { 0.0 };
    if rel > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric { asymmetry: rel });
    }
    Ok(symmetrized(m))
}

/// Applies a scalar function to the spectrum of a symmetric matrix.
fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mapped = eig.eigenvalues.map(f);
    let u = &eig.eigenvectors;
    let out = u * DMatrix::from_diagonal(&mapped) * u.transpose();
    symmetrized(&out)
}

/// Symmetric matrix; an element of the tangent space.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry to [`SYMMETRY_TOLERANCE`] and stores `(A + Aᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&m).map(SymMatrix)
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub(crate) fn from_raw(m: DMatrix<f64>) -> Self {
        SymMatrix(symmetrized(&m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        frobenius(&self.0)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sorted_eigenvalues(&self.0)
    }

    /// Checks positive definiteness, turning the matrix into a manifold point.
    pub fn to_spd(&self) -> Result<SpdMatrix> {
        SpdMatrix::new(self.0.clone())
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        SymMatrix(&self.0 * rhs)
    }
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Symmetric positive-definite matrix; a point of the manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validates symmetry and strict positivity of the spectrum.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let m = check_symmetric(&m)?;
        let min = sorted_eigenvalues(&m)[0];
        if min <= 0.0 || !min.is_finite() {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
            });
        }
        Ok(SpdMatrix(m))
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Wraps a matrix known to be SPD by construction (symmetrizes only).
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        SpdMatrix(symmetrized(&m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sorted_eigenvalues(&self.0)
    }

    pub fn inverse(&self) -> SpdMatrix {
        SpdMatrix(spectral_map(&self.0, |l| 1.0 / l))
    }

    /// `W P Wᵀ`. Fails when `W` is singular or has the wrong size.
    pub fn congruence(&self, w: &DMatrix<f64>) -> Result<SpdMatrix> {
        if w.nrows() != self.dim() || w.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: w.nrows(),
            });
        }
        SpdMatrix::new(symmetrized(&(w * &self.0 * w.transpose())))
    }

    pub fn as_sym(&self) -> SymMatrix {
        SymMatrix(self.0.clone())
    }
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        })
    }
}

/// Matrix exponential of a symmetric matrix.
pub fn matrix_exp(s: &SymMatrix) -> SpdMatrix {
    SpdMatrix(spectral_map(&s.0, f64::exp))
}

/// Principal matrix logarithm of an SPD matrix.
pub fn matrix_log(p: &SpdMatrix) -> SymMatrix {
    SymMatrix(spectral_map(&p.0, f64::ln))
}

/// The unique SPD square root.
pub fn matrix_sqrt(p: &SpdMatrix) -> SpdMatrix {
    SpdMatrix(spectral_map(&p.0, f64::sqrt))
}

/// Inverse of the SPD square root.
pub fn matrix_invsqrt(p: &SpdMatrix) -> SpdMatrix {
    SpdMatrix(spectral_map(&p.0, |l| 1.0 / l.sqrt()))
}

/// `(P^½, P^-½)` from a single decomposition.
fn sqrt_pair(p: &SpdMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(p.0.clone());
    let u = &eig.eigenvectors;
    let ut = u.transpose();
    let root = eig.eigenvalues.map(f64::sqrt);
    let half = u * DMatrix::from_diagonal(&root) * &ut;
    let inv_half = u * DMatrix::from_diagonal(&root.map(|r| 1.0 / r)) * &ut;
    (symmetrized(&half), symmetrized(&inv_half))
}

/// Exponential map at `base`: moves from `base` along the tangent vector `s`.
pub fn exp_map(base: &SpdMatrix, s: &SymMatrix) -> Result<SpdMatrix> {
    same_dim(base.dim(), s.dim())?;
    let (half, inv_half) = sqrt_pair(base);
    let inner = symmetrized(&(&inv_half * &s.0 * &inv_half));
    let e = spectral_map(&inner, f64::exp);
    Ok(SpdMatrix(symmetrized(&(&half * e * &half))))
}

/// Logarithmic map at `base`: the tangent vector pointing to `point`.
pub fn log_map(base: &SpdMatrix, point: &SpdMatrix) -> Result<SymMatrix> {
    same_dim(base.dim(), point.dim())?;
    let (half, inv_half) = sqrt_pair(base);
    let inner = symmetrized(&(&inv_half * &point.0 * &inv_half));
    let l = spectral_map(&inner, f64::ln);
    Ok(SymMatrix(symmetrized(&(&half * l * &half))))
}

/// Affine-invariant geodesic distance.
///
/// Evaluated on the eigenvalues of `L⁻¹ P₂ L⁻ᵀ` with `P₁ = LLᵀ`, which share
/// the spectrum of `P₁⁻¹P₂`. Identical arguments give exactly zero.
pub fn distance(p1: &SpdMatrix, p2: &SpdMatrix) -> Result<f64> {
    same_dim(p1.dim(), p2.dim())?;
    if p1 == p2 {
        return Ok(0.0);
    }
    let chol = nalgebra::Cholesky::new(p1.0.clone())
        .ok_or_else(|| Error::Numerical("Cholesky factorization failed".into()))?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&p2.0)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let w = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let sum: f64 = symmetrized(&w)
        .symmetric_eigenvalues()
        .iter()
        .map(|&l| {
            let g = l.ln();
            g * g
        })
        .sum();
    Ok(sum.sqrt())
}

/// Stopping rule of the Karcher mean fixed point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanConfig {
    /// Bound on the Frobenius norm of the mean tangent step.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MeanConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50,
        }
    }
}

impl MeanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Validation("mean tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Validation("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Whitened mean tangent at `g`; its norm is the Riemannian gradient norm
/// of the Fréchet cost.
struct MeanState {
    half: DMatrix<f64>,
    mean_log: DMatrix<f64>,
    gradient: f64,
}

fn mean_state(g: &SpdMatrix, points: &[SpdMatrix]) -> MeanState {
    let dim = g.dim();
    let (half, inv_half) = sqrt_pair(g);
    let mut mean_log = DMatrix::zeros(dim, dim);
    for p in points {
        let inner = symmetrized(&(&inv_half * &p.0 * &inv_half));
        mean_log += spectral_map(&inner, f64::ln);
    }
    mean_log /= points.len() as f64;
    MeanState {
        half,
        gradient: frobenius(&mean_log),
        mean_log,
    }
}

fn mean_step(state: &MeanState, step: f64) -> SpdMatrix {
    let exp_step = spectral_map(&(&state.mean_log * step), f64::exp);
    SpdMatrix(symmetrized(&(&state.half * exp_step * &state.half)))
}

/// Shortest step tried when the full step overshoots.
const MIN_MEAN_STEP: f64 = 1.0 / 1024.0;

/// Riemannian (Karcher) mean by fixed-point iteration.
///
/// Starts from the arithmetic mean and repeats
/// `G ← exp_G((1/N) Σ log_G(P_n))` until the step norm drops below the
/// tolerance. Each iteration takes the full step when it at least halves the
/// Riemannian gradient; otherwise the step is halved while that keeps
/// lowering the gradient, which stops widely dispersed sets from
/// oscillating. The returned `G` is the iterate at which the residual was
/// measured, so the first-order condition holds at the output itself.
pub fn karcher_mean(points: &[SpdMatrix], config: &MeanConfig) -> Result<SpdMatrix> {
    config.validate()?;
    let first = points
        .first()
        .ok_or_else(|| Error::Validation("cannot average an empty set".into()))?;
    let dim = first.dim();
    for p in points {
        same_dim(dim, p.dim())?;
    }
    let n = points.len() as f64;
    let mut sum = DMatrix::zeros(dim, dim);
    for p in points {
        sum += &p.0;
    }
    let mut g = SpdMatrix::from_trusted(sum / n);
    let mut state = mean_state(&g, points);
    let mut residual;
    let mut iteration = 0;
    loop {
        residual = frobenius(&(&state.half * &state.mean_log * &state.half));
        if !residual.is_finite() {
            return Err(Error::Numerical("non-finite Karcher residual".into()));
        }
        if residual < config.tolerance {
            return Ok(g);
        }
        if iteration == config.max_iterations {
            break;
        }
        iteration += 1;

        let mut step = 1.0;
        let mut best = mean_step(&state, step);
        let mut best_state = mean_state(&best, points);
        while !(best_state.gradient <= 0.5 * state.gradient) && step > MIN_MEAN_STEP {
            step *= 0.5;
            let candidate = mean_step(&state, step);
            let next = mean_state(&candidate, points);
            if !(next.gradient < best_state.gradient) {
                break;
            }
            best = candidate;
            best_state = next;
        }
        if !(best_state.gradient < state.gradient) {
            // no step length improves: rounding floor reached
            break;
        }
        g = best;
        state = best_state;
    }
    Err(Error::MeanNonConvergence {
        iterations: iteration,
        residual,
        last: Box::new(g),
    })
}

/// Ratio between the largest and smallest eigenvalue.
pub fn condition_ratio(p: &SpdMatrix) -> f64 {
    let ev = p.eigenvalues();
    ev[ev.len() - 1] / ev[0]
}
