//! Seeded random vectors and operators shared by verifiers and experiments.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{c, CMatrix, CVector, C64};

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn complex_normal(rng: &mut impl Rng) -> C64 {
    C64::new(normal(rng), normal(rng))
}

pub fn complex_vector(rng: &mut impl Rng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| complex_normal(rng))
}

pub fn real_normal_vector(rng: &mut impl Rng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| c(normal(rng)))
}

/// Gaussian coefficients damped by `(1 + j)^{-decay}`.
pub fn decaying_vector(rng: &mut impl Rng, n: usize, decay: f64) -> CVector {
    CVector::from_fn(n, |j, _| c(normal(rng) * (1.0 + j as f64).powf(-decay)))
}

/// Haar-like random unitary from the QR factorization of a complex Gaussian matrix.
pub fn random_unitary(rng: &mut impl Rng, n: usize) -> CMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| complex_normal(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c(1.0) };
        for z in q.column_mut(j).iter_mut() {
            *z *= phase;
        }
    }
    q
}

/// Real orthogonal matrix from the QR factorization of a real Gaussian matrix.
pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> CMatrix {
    let g = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| normal(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    CMatrix::from_fn(n, n, |i, j| c(q[(i, j)] * r[(j, j)].signum()))
}
