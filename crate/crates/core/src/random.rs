//! Seeded random matrices and states, used by property tests and sweeps.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::matstack::{ComplexMatrix, C64};
use crate::states::{DensityMatrix, Ensemble};

fn gaussian_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Matrix with i.i.d. standard complex Gaussian entries.
pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| gaussian_c64(rng))
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexMatrix {
    random_matrix(rng, n, n).hermitian_part()
}

/// Haar-random unitary via QR of a Ginibre matrix with phase correction.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexMatrix {
    let g = random_matrix(rng, n, n).into_dmatrix();
    let qr = g.qr();
    let (q, r) = qr.unpack();
    let mut q = q;
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        q.column_mut(j).iter_mut().for_each(|z| *z *= phase);
    }
    ComplexMatrix::from_dmatrix_unchecked(q)
}

/// Unit vector drawn uniformly from the sphere.
pub fn random_pure<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<C64> {
    let v: Vec<C64> = (0..d).map(|_| gaussian_c64(rng)).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}

/// Density matrix `G G† / Tr(G G†)` with a `d x d` Ginibre `G` (full rank a.s.).
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DensityMatrix {
    random_density_rank(rng, d, d)
}

/// Density matrix of rank at most `rank`.
pub fn random_density_rank<R: Rng + ?Sized>(rng: &mut R, d: usize, rank: usize) -> DensityMatrix {
    let g = random_matrix(rng, d, rank);
    let m = &g * &g.adjoint();
    let tr = m.trace().re;
    DensityMatrix::from_matrix_unchecked(m.scale(1.0 / tr).hermitian_part(), vec![d])
}

/// Ensemble of `count` random mixed states with Dirichlet-like weights.
pub fn random_ensemble<R: Rng + ?Sized>(rng: &mut R, count: usize, d: usize) -> Ensemble {
    let raw: Vec<f64> = (0..count).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = raw.iter().sum();
    let probs = raw.into_iter().map(|p| p / total).collect();
    let states = (0..count).map(|_| random_density(rng, d)).collect();
    Ensemble::new(probs, states).expect("random ensemble is valid")
}
