#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riemann_ssvep::manifold::SpdMatrix;
use riemann_ssvep::Trial;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// `AAᵀ/d + 0.1·I`: well conditioned, with eigenvalues spread over about a decade.
pub fn random_spd(rng: &mut impl Rng, dim: usize) -> SpdMatrix {
    let a = gaussian_matrix(rng, dim, dim);
    let m = &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.1;
    SpdMatrix::new((&m + m.transpose()) * 0.5).expect("spd")
}

/// Invertible matrix with bounded condition number.
pub fn random_invertible(rng: &mut impl Rng, dim: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, dim, dim) / (dim as f64).sqrt() + DMatrix::identity(dim, dim) * 1.5
}

pub fn random_trial(rng: &mut impl Rng, channels: usize, samples: usize) -> Trial {
    Trial::new(gaussian_matrix(rng, channels, samples), 256.0).expect("trial")
}

pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}
