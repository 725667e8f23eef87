//! Covariance estimators for a single multichannel trial.
//!
//! All estimators work on the channel-wise centered samples `y_n = x_n − x̄`:
//!
//! - [`scm`]: `(1/(N−1)) Σ y_n y_nᵀ`
//! - [`nscm`]: `(C/N) Σ y_n y_nᵀ / (y_nᵀ y_n)`
//! - [`shrinkage`]: `κ Γ + (1−κ) SCM` for a structured target `Γ`
//! - [`fixed_point`]: the recursion `Σ ← (C/N) Σ y_n y_nᵀ / (y_nᵀ Σ⁻¹ y_n)`
//!   started from the NSCM.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{SpdMatrix, SymMatrix};
use crate::trial::Trial;

/// Smallest-to-largest eigenvalue ratio under which an estimate is flagged
/// rank-deficient.
pub const RANK_DEFICIENCY_RATIO: f64 = 1e-10;

/// Centered samples with energy below this are degenerate for the NSCM.
pub const DEGENERATE_ENERGY: f64 = 1e-12;

/// Upper clip of an automatically chosen shrinkage intensity.
pub const KAPPA_MAX: f64 = 1.0 - 1e-9;

/// A covariance estimate and its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub matrix: SymMatrix,
    /// Smallest eigenvalue below [`RANK_DEFICIENCY_RATIO`] times the largest.
    pub rank_deficient: bool,
    /// Shrinkage intensity actually used, when applicable.
    pub kappa: Option<f64>,
}

impl Estimate {
    fn new(m: DMatrix<f64>, kappa: Option<f64>) -> Self {
        let matrix = SymMatrix::from_raw(m);
        let ev = matrix.eigenvalues();
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        let rank_deficient = !(hi > 0.0) || lo < RANK_DEFICIENCY_RATIO * hi;
        Estimate {
            matrix,
            rank_deficient,
            kappa,
        }
    }

    pub fn into_spd(self) -> Result<SpdMatrix> {
        self.matrix.to_spd()
    }
}

fn require_samples(trial: &Trial, min: usize) -> Result<()> {
    if trial.samples() < min {
        return Err(Error::Validation(format!(
            "estimator needs at least {min} samples, trial has {}",
            trial.samples()
        )));
    }
    Ok(())
}

fn scm_matrix(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.ncols() as f64;
    y * y.transpose() / (n - 1.0)
}

/// Sample covariance matrix.
pub fn scm(trial: &Trial) -> Result<Estimate> {
    require_samples(trial, 2)?;
    Ok(Estimate::new(scm_matrix(&trial.centered()), None))
}

fn sample_energies(y: &DMatrix<f64>) -> Result<Vec<f64>> {
    y.column_iter()
        .enumerate()
        .map(|(index, col)| {
            let energy = col.norm_squared();
            if energy < DEGENERATE_ENERGY {
                Err(Error::DegenerateSample { index, energy })
            } else {
                Ok(energy)
            }
        })
        .collect()
}

/// Weighted outer-product sum `(C/N) Σ w_n y_n y_nᵀ`.
fn weighted_scatter(y: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let (c, n) = y.shape();
    let mut scaled = y.clone();
    for (mut col, w) in scaled.column_iter_mut().zip(weights) {
        col *= *w;
    }
    scaled * y.transpose() * (c as f64 / n as f64)
}

/// Normalized sample covariance matrix.
pub fn nscm(trial: &Trial) -> Result<Estimate> {
    require_samples(trial, 2)?;
    let y = trial.centered();
    let weights: Vec<f64> = sample_energies(&y)?.iter().map(|e| 1.0 / e).collect();
    Ok(Estimate::new(weighted_scatter(&y, &weights), None))
}

/// Structured target of a shrinkage estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShrinkageTarget {
    /// `v I` with `v = Tr(SCM)`.
    LedoitWolf,
    /// `v I` with `v = Tr(SCM)/M` (see [`BlankertzScale`]).
    Blankertz,
    /// `diag(SCM)`, the unequal-variance diagonal target.
    Schafer,
}

/// Divisor `M` of the Blankertz target scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BlankertzScale {
    /// `M = C(C+1)/2`, the dimension of the space of covariance matrices.
    #[default]
    SpaceDimension,
    /// `M = C`, the average-eigenvalue convention.
    Channels,
}

/// Shrinkage intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kappa {
    /// Analytic intensity estimated from the data.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageSpec {
    pub target: ShrinkageTarget,
    pub kappa: Kappa,
    #[serde(default)]
    pub blankertz_scale: BlankertzScale,
}

impl ShrinkageSpec {
    pub fn auto(target: ShrinkageTarget) -> Self {
        ShrinkageSpec {
            target,
            kappa: Kappa::Auto,
            blankertz_scale: BlankertzScale::default(),
        }
    }

    pub fn fixed(target: ShrinkageTarget, kappa: f64) -> Self {
        ShrinkageSpec {
            target,
            kappa: Kappa::Fixed(kappa),
            blankertz_scale: BlankertzScale::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Kappa::Fixed(k) = self.kappa {
            if !(0.0..1.0).contains(&k) {
                return Err(Error::Validation(format!(
                    "shrinkage intensity must lie in [0, 1), got {k}"
                )));
            }
        }
        Ok(())
    }

    /// The target matrix for a given SCM.
    pub fn target_matrix(&self, scm: &DMatrix<f64>) -> DMatrix<f64> {
        let c = scm.nrows();
        match self.target {
            ShrinkageTarget::LedoitWolf => DMatrix::identity(c, c) * scm.trace(),
            ShrinkageTarget::Blankertz => {
                let m = match self.blankertz_scale {
                    BlankertzScale::SpaceDimension => (c * (c + 1) / 2) as f64,
                    BlankertzScale::Channels => c as f64,
                };
                DMatrix::identity(c, c) * (scm.trace() / m)
            }
            ShrinkageTarget::Schafer => DMatrix::from_diagonal(&scm.diagonal()),
        }
    }
}

/// Analytic shrinkage intensity.
///
/// Uses the unbiased entry variances
/// `Var(s_ij) = N/(N−1)³ Σ_n (w_nij − w̄_ij)²`, `w_nij = y_ni y_nj`, and
/// `κ = Σ Var(s_ij) / Σ (s_ij − t_ij)²` over all entries for the scaled
/// identity targets, or over off-diagonal entries for the diagonal target.
fn auto_kappa(y: &DMatrix<f64>, scm: &DMatrix<f64>, target: &DMatrix<f64>, diag_target: bool) -> f64 {
    let n = y.ncols() as f64;
    let sq = y.component_mul(y);
    let sum_w2 = &sq * sq.transpose();
    // w̄_ij = (N−1)/N s_ij
    let wbar = scm * ((n - 1.0) / n);
    let factor = n / (n - 1.0).powi(3);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scm.nrows() {
        for j in 0..scm.ncols() {
            if diag_target && i == j {
                continue;
            }
            let var = factor * (sum_w2[(i, j)] - n * wbar[(i, j)] * wbar[(i, j)]).max(0.0);
            num += var;
            let d = scm[(i, j)] - target[(i, j)];
            den += d * d;
        }
    }
    if den <= 0.0 {
        return 0.0;
    }
    (num / den).clamp(0.0, KAPPA_MAX)
}

/// Shrinkage estimator `κ Γ + (1−κ) SCM`.
pub fn shrinkage(trial: &Trial, spec: &ShrinkageSpec) -> Result<Estimate> {
    spec.validate()?;
    require_samples(trial, 2)?;
    let y = trial.centered();
    let s = scm_matrix(&y);
    let target = spec.target_matrix(&s);
    let kappa = match spec.kappa {
        Kappa::Fixed(k) => k,
        Kappa::Auto => auto_kappa(&y, &s, &target, spec.target == ShrinkageTarget::Schafer),
    };
    let m = &target * kappa + &s * (1.0 - kappa);
    Ok(Estimate::new(m, Some(kappa)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    /// Bound on `‖Σ_{t+1} − Σ_t‖_F / ‖Σ_t‖_F`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 100,
        }
    }
}

/// One application of the fixed-point map to `sigma`.
pub fn fixed_point_step(trial: &Trial, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let y = trial.centered();
    fixed_point_map(&y, sigma)
}

fn fixed_point_map(y: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            expected: y.nrows(),
            found: sigma.nrows(),
        });
    }
    let chol = nalgebra::Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::Numerical("fixed-point iterate is not positive definite".into()))?;
    let z = chol
        .l()
        .solve_lower_triangular(y)
        .ok_or_else(|| Error::Numerical("fixed-point iterate is singular".into()))?;
    let mut weights = Vec::with_capacity(y.ncols());
    for (index, col) in z.column_iter().enumerate() {
        let q = col.norm_squared();
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::DegenerateSample { index, energy: q });
        }
        weights.push(1.0 / q);
    }
    let out = weighted_scatter(y, &weights);
    Ok((&out + out.transpose()) * 0.5)
}

/// Fixed-point (maximum-likelihood shape) estimator, started from the NSCM.
pub fn fixed_point(trial: &Trial, config: &FixedPointConfig) -> Result<Estimate> {
    if !(config.tolerance > 0.0) {
        return Err(Error::Validation("fixed-point tolerance must be positive".into()));
    }
    if trial.samples() <= trial.channels() {
        return Err(Error::Validation(format!(
            "fixed-point estimator needs more samples ({}) than channels ({})",
            trial.samples(),
            trial.channels()
        )));
    }
    let y = trial.centered();
    let weights: Vec<f64> = sample_energies(&y)?.iter().map(|e| 1.0 / e).collect();
    let mut sigma = weighted_scatter(&y, &weights);
    let mut change = f64::INFINITY;
    for _ in 0..config.max_iterations {
        let next = fixed_point_map(&y, &sigma)?;
        change = (&next - &sigma).norm() / sigma.norm();
        sigma = next;
        if change < config.tolerance {
            return Ok(Estimate::new(sigma, None));
        }
    }
    Err(Error::FixedPointNonConvergence {
        iterations: config.max_iterations,
        change,
        last: Box::new(sigma),
    })
}

/// Any of the supported estimators, as recorded in models and reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Scm,
    Nscm,
    Shrinkage(ShrinkageSpec),
    FixedPoint(FixedPointConfig),
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec::Shrinkage(ShrinkageSpec::auto(ShrinkageTarget::Schafer))
    }
}

impl EstimatorSpec {
    pub fn estimate(&self, trial: &Trial) -> Result<Estimate> {
        match self {
            EstimatorSpec::Scm => scm(trial),
            EstimatorSpec::Nscm => nscm(trial),
            EstimatorSpec::Shrinkage(spec) => shrinkage(trial, spec),
            EstimatorSpec::FixedPoint(cfg) => fixed_point(trial, cfg),
        }
    }

    /// Estimates and insists on a positive-definite result.
    pub fn estimate_spd(&self, trial: &Trial) -> Result<SpdMatrix> {
        self.estimate(trial)?.into_spd()
    }

    /// Short name used on the command line and in reports.
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Scm => "scm",
            EstimatorSpec::Nscm => "nscm",
            EstimatorSpec::Shrinkage(s) => match s.target {
                ShrinkageTarget::LedoitWolf => "ledoit",
                ShrinkageTarget::Blankertz => "blankertz",
                ShrinkageTarget::Schafer => "schafer",
            },
            EstimatorSpec::FixedPoint(_) => "fixed-point",
        }
    }

    /// The estimator names accepted by [`FromStr`].
    pub const NAMES: [&'static str; 6] =
        ["scm", "nscm", "ledoit", "blankertz", "schafer", "fixed-point"];
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "scm" => EstimatorSpec::Scm,
            "nscm" => EstimatorSpec::Nscm,
            "ledoit" | "ledoit-wolf" => {
                EstimatorSpec::Shrinkage(ShrinkageSpec::auto(ShrinkageTarget::LedoitWolf))
            }
            "blankertz" => EstimatorSpec::Shrinkage(ShrinkageSpec::auto(ShrinkageTarget::Blankertz)),
            "schafer" | "schaefer" => {
                EstimatorSpec::Shrinkage(ShrinkageSpec::auto(ShrinkageTarget::Schafer))
            }
            "fixed-point" | "fp" => EstimatorSpec::FixedPoint(FixedPointConfig::default()),
            other => {
                return Err(Error::Validation(format!(
                    "unknown estimator '{other}' (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }
}
