//! Density matrices, ensembles and their entropic functionals.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matstack::{
    check_dim, hermitian_eig_unchecked, psd_eig, tensor_product_within, ComplexMatrix, EigDecomposition, C64,
    HERMITIAN_TOL, PSD_CLAMP,
};

/// Tolerance on `Tr ρ = 1`.
pub const TRACE_TOL: f64 = 1e-9;

/// Tolerance on `Σ p_i = 1` for a constructed ensemble.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Eigenvalues at or below this floor do not contribute to the entropy sum.
pub const ENTROPY_FLOOR: f64 = 1e-12;

/// Default threshold used by [`support_dim`].
pub const SUPPORT_TOL: f64 = 1e-10;

/// Unit-trace, Hermitian, positive semidefinite matrix together with the
/// tensor factorisation of the space it acts on.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
    factor_dims: Vec<usize>,
}

impl DensityMatrix {
    /// Validates and wraps `matrix`.
    pub fn new(matrix: ComplexMatrix, factor_dims: Vec<usize>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Shape(format!(
                "density matrix must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        check_factor_dims(&factor_dims, matrix.rows())?;
        let dev = matrix.hermitian_deviation();
        if dev > HERMITIAN_TOL {
            return Err(Error::Validation(format!("matrix is not Hermitian (deviation {dev:e})")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::Validation(format!("trace is {tr}, expected 1")));
        }
        let matrix = matrix.hermitian_part();
        let eig = hermitian_eig_unchecked(&matrix)?;
        let min = eig.eigenvalues.last().copied().unwrap_or(0.0);
        if min < -PSD_CLAMP {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        Ok(Self { matrix, factor_dims })
    }

    /// Single-factor density matrix.
    pub fn from_matrix(matrix: ComplexMatrix) -> Result<Self> {
        let d = matrix.rows();
        Self::new(matrix, vec![d])
    }

    pub(crate) fn from_matrix_unchecked(matrix: ComplexMatrix, factor_dims: Vec<usize>) -> Self {
        debug_assert_eq!(factor_dims.iter().product::<usize>(), matrix.rows());
        Self { matrix, factor_dims }
    }

    /// `|ψ⟩⟨ψ|` for a vector that is normalised here.
    pub fn pure(amplitudes: &[C64]) -> Result<Self> {
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Validation("cannot normalise a zero or non-finite vector".into()));
        }
        let v: Vec<C64> = amplitudes.iter().map(|z| z / norm).collect();
        Ok(Self::from_matrix_unchecked(ComplexMatrix::outer(&v), vec![v.len()]))
    }

    /// Diagonal state with the given probabilities.
    pub fn diagonal(probs: &[f64]) -> Result<Self> {
        Self::from_matrix(ComplexMatrix::diag(probs))
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self::from_matrix_unchecked(ComplexMatrix::identity(d).scale(1.0 / d as f64), vec![d])
    }

    /// Same matrix, new factorisation.
    pub fn with_factor_dims(self, factor_dims: Vec<usize>) -> Result<Self> {
        check_factor_dims(&factor_dims, self.dim())?;
        Ok(Self { factor_dims, ..self })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn factor_dims(&self) -> &[usize] {
        &self.factor_dims
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// Eigendecomposition with eigenvalues clamped at zero.
    pub fn eig(&self) -> Result<EigDecomposition> {
        psd_eig(&self.matrix)
    }

    /// Spectrum, descending, clamped at zero.
    pub fn spectrum(&self) -> Vec<f64> {
        self.eig().map(|e| e.eigenvalues).unwrap_or_else(|_| vec![f64::NAN; self.dim()])
    }

    /// `self ⊗ other`, concatenating factor lists.
    pub fn tensor(&self, other: &Self, max_dim: usize) -> Result<Self> {
        let m = tensor_product_within(&self.matrix, &other.matrix, max_dim)?;
        let mut dims = self.factor_dims.clone();
        dims.extend_from_slice(&other.factor_dims);
        Ok(Self::from_matrix_unchecked(m, dims))
    }

    /// Reduced state on the factors listed in `keep`.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        let m = crate::matstack::partial_trace(&self.matrix, &self.factor_dims, keep)?;
        let mut kept = keep.to_vec();
        kept.sort_unstable();
        let dims = kept.iter().map(|&i| self.factor_dims[i]).collect();
        Ok(Self::from_matrix_unchecked(m, dims))
    }

    /// `U ρ U†`.
    pub fn conjugate_by(&self, u: &ComplexMatrix) -> Result<Self> {
        let m = u.matmul(&self.matrix)?.matmul(&u.adjoint())?;
        Ok(Self::from_matrix_unchecked(m.hermitian_part(), self.factor_dims.clone()))
    }
}

fn check_factor_dims(factor_dims: &[usize], dim: usize) -> Result<()> {
    if factor_dims.is_empty() || factor_dims.contains(&0) || factor_dims.iter().product::<usize>() != dim {
        return Err(Error::Shape(format!("factor dimensions {factor_dims:?} do not multiply to {dim}")));
    }
    Ok(())
}

/// Finite ensemble `{p_i, ρ_i}` of equally-shaped states.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    probs: Vec<f64>,
    states: Vec<DensityMatrix>,
}

impl Ensemble {
    pub fn new(probs: Vec<f64>, states: Vec<DensityMatrix>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Validation("ensemble is empty".into()));
        }
        if probs.len() != states.len() {
            return Err(Error::Shape(format!("{} probabilities for {} states", probs.len(), states.len())));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(Error::Validation(format!("probability {i} is {p}, must be non-negative")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Validation(format!("probability sum is {sum}, expected 1")));
        }
        let dims = states[0].factor_dims().to_vec();
        if let Some(i) = states.iter().position(|s| s.factor_dims() != dims.as_slice()) {
            return Err(Error::Shape(format!(
                "state {i} has factor dimensions {:?}, expected {dims:?}",
                states[i].factor_dims()
            )));
        }
        Ok(Self { probs, states })
    }

    /// Single-state ensemble.
    pub fn single(state: DensityMatrix) -> Self {
        Self {
            probs: vec![1.0],
            states: vec![state],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn states(&self) -> &[DensityMatrix] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn factor_dims(&self) -> &[usize] {
        self.states[0].factor_dims()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &DensityMatrix)> {
        self.probs.iter().copied().zip(self.states.iter())
    }
}

/// `ρ = Σ p_i ρ_i`.
pub fn ensemble_density(e: &Ensemble) -> DensityMatrix {
    let d = e.dim();
    let mut acc = ComplexMatrix::zeros(d, d);
    for (p, s) in e.iter() {
        acc = &acc + &s.matrix().scale(p);
    }
    DensityMatrix::from_matrix_unchecked(acc.hermitian_part(), e.factor_dims().to_vec())
}

/// Shannon entropy (bits) of a spectrum, ignoring values at or below [`ENTROPY_FLOOR`].
pub fn spectrum_entropy(eigenvalues: &[f64]) -> f64 {
    eigenvalues
        .iter()
        .filter(|&&l| l > ENTROPY_FLOOR)
        .map(|&l| -l * l.log2())
        .sum::<f64>()
        .max(0.0)
}

/// `S(ρ) = -Tr ρ log₂ ρ`.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> f64 {
    spectrum_entropy(&rho.spectrum())
}

/// Holevo quantity `S(Σ p_i ρ_i) - Σ p_i S(ρ_i)` in bits.
pub fn holevo_quantity(e: &Ensemble) -> f64 {
    let mean: f64 = e.iter().map(|(p, s)| p * von_neumann_entropy(s)).sum();
    (von_neumann_entropy(&ensemble_density(e)) - mean).max(0.0)
}

/// Number of eigenvalues strictly greater than `tol`.
pub fn support_dim(rho: &DensityMatrix, tol: f64) -> usize {
    rho.spectrum().iter().filter(|&&l| l > tol).count()
}

/// All `n`-fold products `ρ_{i_1} ⊗ … ⊗ ρ_{i_n}`, multi-indices in lexicographic order.
pub fn product_ensemble(e0: &Ensemble, n: usize, max_dim: usize) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::Validation("block length must be positive".into()));
    }
    let count = checked_pow(e0.len(), n).ok_or(Error::Size { dim: usize::MAX, max: max_dim })?;
    check_dim(count, max_dim)?;
    let dim = checked_pow(e0.dim(), n).ok_or(Error::Size { dim: usize::MAX, max: max_dim })?;
    check_dim(dim, max_dim)?;

    let mut probs = e0.probs().to_vec();
    let mut states = e0.states().to_vec();
    for _ in 1..n {
        let mut next_p = Vec::with_capacity(probs.len() * e0.len());
        let mut next_s = Vec::with_capacity(probs.len() * e0.len());
        for (p, s) in probs.iter().zip(&states) {
            for (q, t) in e0.iter() {
                next_p.push(p * q);
                next_s.push(s.tensor(t, max_dim)?);
            }
        }
        probs = next_p;
        states = next_s;
    }
    // renormalise away accumulated rounding in the product weights
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ensemble::new(probs, states)
}

pub(crate) fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    (0..exp).try_fold(1usize, |acc, _| acc.checked_mul(base))
}

/// Summary of one ensemble, as reported by the analysis command.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleSummary {
    pub entropy: f64,
    pub state_entropies: Vec<f64>,
    pub holevo: f64,
    pub support_dim: usize,
    pub state_support_dims: Vec<usize>,
}

pub fn summarize(e: &Ensemble) -> EnsembleSummary {
    let rho = ensemble_density(e);
    EnsembleSummary {
        entropy: von_neumann_entropy(&rho),
        state_entropies: e.states().iter().map(von_neumann_entropy).collect(),
        holevo: holevo_quantity(e),
        support_dim: support_dim(&rho, SUPPORT_TOL),
        state_support_dims: e.states().iter().map(|s| support_dim(s, SUPPORT_TOL)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matstack::DEFAULT_MAX_DIM;
    use crate::random::{random_density, random_ensemble, random_pure};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ket0() -> DensityMatrix {
        DensityMatrix::diagonal(&[1.0, 0.0]).unwrap()
    }

    fn ket1() -> DensityMatrix {
        DensityMatrix::diagonal(&[0.0, 1.0]).unwrap()
    }

    fn plus() -> DensityMatrix {
        let s = 1.0 / 2f64.sqrt();
        DensityMatrix::pure(&[C64::new(s, 0.0), C64::new(s, 0.0)]).unwrap()
    }

    fn binary_entropy(p: f64) -> f64 {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        assert!(DensityMatrix::diagonal(&[0.5, 0.4]).is_err());
        assert!(matches!(DensityMatrix::diagonal(&[1.5, -0.5]), Err(Error::NotPsd { .. })));
        let nonherm = ComplexMatrix::from_row_major(
            2,
            2,
            vec![C64::new(0.5, 0.0), C64::new(0.1, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0)],
        )
        .unwrap();
        assert!(matches!(DensityMatrix::from_matrix(nonherm), Err(Error::Validation(_))));
        assert!(DensityMatrix::new(ComplexMatrix::diag(&[0.5, 0.5]), vec![3]).is_err());
    }

    #[test]
    fn ensemble_validation() {
        assert!(Ensemble::new(vec![0.5, 0.4], vec![ket0(), ket1()]).is_err());
        assert!(Ensemble::new(vec![1.2, -0.2], vec![ket0(), ket1()]).is_err());
        assert!(Ensemble::new(vec![1.0], vec![ket0(), ket1()]).is_err());
        let big = DensityMatrix::maximally_mixed(4);
        assert!(Ensemble::new(vec![0.5, 0.5], vec![ket0(), big]).is_err());
    }

    #[test]
    fn ensemble_density_cases() {
        let rho = random_density(&mut ChaCha8Rng::seed_from_u64(1), 3);
        assert!(ensemble_density(&Ensemble::single(rho.clone())).matrix().approx_eq(rho.matrix(), 1e-15));

        let e = Ensemble::new(vec![0.5, 0.5], vec![ket0(), ket1()]).unwrap();
        assert!(ensemble_density(&e).matrix().approx_eq(&ComplexMatrix::diag(&[0.5, 0.5]), 1e-15));

        let e = Ensemble::new(vec![0.5, 0.5], vec![DensityMatrix::maximally_mixed(2), ket0()]).unwrap();
        assert!(ensemble_density(&e).matrix().approx_eq(&ComplexMatrix::diag(&[0.75, 0.25]), 1e-15));
    }

    #[test]
    fn entropy_cases() {
        let v = random_pure(&mut ChaCha8Rng::seed_from_u64(2), 4);
        assert!(von_neumann_entropy(&DensityMatrix::pure(&v).unwrap()).abs() < 1e-10);
        assert!((von_neumann_entropy(&DensityMatrix::maximally_mixed(2)) - 1.0).abs() < 1e-12);
        let s = von_neumann_entropy(&DensityMatrix::diagonal(&[0.9, 0.1]).unwrap());
        assert!((s - binary_entropy(0.9)).abs() < 1e-12);
        assert!((s - 0.468996).abs() < 1e-6);
    }

    #[test]
    fn holevo_cases() {
        let rho = random_density(&mut ChaCha8Rng::seed_from_u64(3), 3);
        assert!(holevo_quantity(&Ensemble::single(rho)).abs() < 1e-10);

        let e = Ensemble::new(vec![0.5, 0.5], vec![ket0(), ket1()]).unwrap();
        assert!((holevo_quantity(&e) - 1.0).abs() < 1e-12);

        let e = Ensemble::new(vec![0.5, 0.5], vec![DensityMatrix::maximally_mixed(2), ket0()]).unwrap();
        let want = binary_entropy(0.75) - 0.5;
        assert!((holevo_quantity(&e) - want).abs() < 1e-12);
        assert!((holevo_quantity(&e) - 0.311278).abs() < 1e-6);
    }

    #[test]
    fn pure_pair_entropy() {
        let e = Ensemble::new(vec![0.5, 0.5], vec![ket0(), plus()]).unwrap();
        let s = von_neumann_entropy(&ensemble_density(&e));
        let lam = (2.0 + 2f64.sqrt()) / 4.0;
        assert!((s - binary_entropy(lam)).abs() < 1e-12);
        assert!((s - 0.600876).abs() < 1e-6);
        assert!((holevo_quantity(&e) - s).abs() < 1e-9);
    }

    #[test]
    fn support_dim_cases() {
        let v = random_pure(&mut ChaCha8Rng::seed_from_u64(4), 4);
        assert_eq!(support_dim(&DensityMatrix::pure(&v).unwrap(), SUPPORT_TOL), 1);
        assert_eq!(support_dim(&DensityMatrix::maximally_mixed(2), SUPPORT_TOL), 2);
        let rho = DensityMatrix::diagonal(&[0.5, 0.5 - 1e-12, 1e-12, 0.0]).unwrap();
        assert_eq!(support_dim(&rho, 1e-10), 2);
    }

    #[test]
    fn product_ensemble_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e0 = random_ensemble(&mut rng, 2, 2);
        let one = product_ensemble(&e0, 1, DEFAULT_MAX_DIM).unwrap();
        assert_eq!(one, e0);

        let two = product_ensemble(&e0, 2, DEFAULT_MAX_DIM).unwrap();
        assert_eq!(two.len(), 4);
        assert_eq!(two.factor_dims(), &[2, 2]);
        let rho = ensemble_density(&e0);
        let want = rho.tensor(&rho, DEFAULT_MAX_DIM).unwrap();
        assert!(ensemble_density(&two).matrix().approx_eq(want.matrix(), 1e-12));

        let half = Ensemble::new(vec![0.5, 0.5], vec![ket0(), plus()]).unwrap();
        let sq = product_ensemble(&half, 2, DEFAULT_MAX_DIM).unwrap();
        assert!(sq.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        // lexicographic: index 1 is (0, +)
        let want = ket0().tensor(&plus(), DEFAULT_MAX_DIM).unwrap();
        assert!(sq.states()[1].matrix().approx_eq(want.matrix(), 1e-15));
    }

    #[test]
    fn product_ensemble_guard() {
        let e0 = Ensemble::new(vec![0.5, 0.5], vec![ket0(), ket1()]).unwrap();
        assert!(matches!(product_ensemble(&e0, 5, 16), Err(Error::Size { .. })));
    }
}
