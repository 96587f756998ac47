//! Uhlmann fidelity and purifications.
//!
//! Fidelity uses the squared convention `F(ρ, σ) = (Tr|√ρ √σ|)²`, evaluated as
//! the squared sum of singular values of `√ρ √σ`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matstack::{psd_sqrt, singular_values, svd, ComplexMatrix, C64};
use crate::states::{DensityMatrix, Ensemble, SUPPORT_TOL};

/// Eigenvalues treated as zero when forming square roots.
const EIGEN_NOISE: f64 = 1e-14;

/// Unit-norm tolerance for [`PureStateVector`].
pub const NORM_TOL: f64 = 1e-10;

/// Amplitudes below this magnitude are skipped when fixing the global phase.
const PHASE_TOL: f64 = 1e-12;

/// Normalised state vector on a tensor-product space.
#[derive(Clone, Debug, PartialEq)]
pub struct PureStateVector {
    amplitudes: Vec<C64>,
    factor_dims: Vec<usize>,
}

impl PureStateVector {
    pub fn new(amplitudes: Vec<C64>, factor_dims: Vec<usize>) -> Result<Self> {
        if factor_dims.is_empty() || factor_dims.iter().product::<usize>() != amplitudes.len() {
            return Err(Error::Shape(format!(
                "factor dimensions {factor_dims:?} do not match {} amplitudes",
                amplitudes.len()
            )));
        }
        let norm = norm(&amplitudes);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Validation(format!("state vector has norm {norm}")));
        }
        Ok(Self { amplitudes, factor_dims })
    }

    /// Normalises `amplitudes` before wrapping.
    pub fn normalized(amplitudes: Vec<C64>, factor_dims: Vec<usize>) -> Result<Self> {
        let n = norm(&amplitudes);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Validation("cannot normalise a zero or non-finite vector".into()));
        }
        Self::new(amplitudes.into_iter().map(|z| z / n).collect(), factor_dims)
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn factor_dims(&self) -> &[usize] {
        &self.factor_dims
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|⟨self|other⟩|²`.
    pub fn overlap(&self, other: &Self) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix::from_matrix_unchecked(ComplexMatrix::outer(&self.amplitudes), self.factor_dims.clone())
    }

    /// Reduced state on the leading `split` factors.
    pub fn reduced_leading(&self, split: usize) -> DensityMatrix {
        let m = self.as_matrix(split);
        let rho = (&m * &m.adjoint()).hermitian_part();
        DensityMatrix::from_matrix_unchecked(rho, self.factor_dims[..split].to_vec())
    }

    /// Reshapes into a matrix with rows indexed by the first `split` factors.
    pub fn as_matrix(&self, split: usize) -> ComplexMatrix {
        let rows: usize = self.factor_dims[..split].iter().product();
        let cols = self.dim() / rows;
        ComplexMatrix::from_fn(rows, cols, |i, j| self.amplitudes[i * cols + j])
    }

    fn with_canonical_phase(mut self) -> Self {
        if let Some(z) = self.amplitudes.iter().find(|z| z.norm() > PHASE_TOL).copied() {
            let phase = z.conj() / z.norm();
            self.amplitudes.iter_mut().for_each(|a| *a *= phase);
        }
        self
    }
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn check_same_dim(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<()> {
    if rho.dim() != sigma.dim() {
        return Err(Error::Shape(format!(
            "fidelity between states of dimension {} and {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    Ok(())
}

/// `F(ρ, σ) = (Σ singular values of √ρ √σ)²`, clamped to `[0, 1]`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_same_dim(rho, sigma)?;
    Ok(fidelity_psd(rho.matrix(), sigma.matrix())?.clamp(0.0, 1.0))
}

/// Fidelity of two PSD matrices that need not have unit trace.
pub fn fidelity_psd(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    let x = psd_sqrt(a)?.matmul(&psd_sqrt(b)?)?;
    Ok(trace_norm_squared(&x))
}

/// `(Tr|x|)²`. With `σ = Γ Γ†` one has `F(ρ, σ) = trace_norm_squared(√ρ Γ)`.
pub fn trace_norm_squared(x: &ComplexMatrix) -> f64 {
    let t: f64 = singular_values(x).iter().sum();
    t * t
}

/// Fidelity via the nested form `[Tr √(√ρ σ √ρ)]²`.
pub fn fidelity_nested(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_same_dim(rho, sigma)?;
    let sr = psd_sqrt(rho.matrix())?;
    let inner = (&(&sr * sigma.matrix()) * &sr).hermitian_part();
    let t = psd_sqrt(&inner)?.trace().re;
    Ok((t * t).clamp(0.0, 1.0))
}

/// `Σ_i p_i F(ρ_i, ρ'_i)` with the weights of `e`.
pub fn average_fidelity(e: &Ensemble, e_prime: &Ensemble) -> Result<f64> {
    if e.len() != e_prime.len() {
        return Err(Error::Shape(format!("ensembles of length {} and {}", e.len(), e_prime.len())));
    }
    e.iter()
        .zip(e_prime.states())
        .map(|((p, a), b)| fidelity(a, b).map(|f| p * f))
        .sum()
}

/// `Σ_k √λ_k |v_k⟩ ⊗ |k⟩` on `H ⊗ H`, purifier dimension equal to `dim ρ`.
pub fn canonical_purification(rho: &DensityMatrix) -> Result<PureStateVector> {
    let d = rho.dim();
    let eig = rho.eig()?;
    let v = eig.eigenvectors.as_dmatrix();
    let mut amps = vec![C64::new(0.0, 0.0); d * d];
    for s in 0..d {
        for k in 0..d {
            amps[s * d + k] = v[(s, k)] * eig.eigenvalues[k].sqrt();
        }
    }
    let mut dims = rho.factor_dims().to_vec();
    dims.push(d);
    Ok(PureStateVector::normalized(amps, dims)?.with_canonical_phase())
}

/// Purification `φ` of `rho` maximising `|⟨φ'|φ⟩|²`.
///
/// `phi_prime` must live on `H_sys ⊗ H_pur` with its leading factors equal to
/// those of `rho`. The maximal overlap equals `F(rho, Tr_pur |φ'⟩⟨φ'|)`.
pub fn optimal_purification(rho: &DensityMatrix, phi_prime: &PureStateVector) -> Result<PureStateVector> {
    let sys = rho.factor_dims();
    let split = sys.len();
    if phi_prime.factor_dims().len() <= split || &phi_prime.factor_dims()[..split] != sys {
        return Err(Error::Shape(format!(
            "purification factors {:?} do not extend system factors {sys:?}",
            phi_prime.factor_dims()
        )));
    }
    let d = rho.dim();
    let dp = phi_prime.dim() / d;
    let eig = rho.eig()?;
    if let Some(k) = (dp..d).find(|&k| eig.eigenvalues[k] > SUPPORT_TOL) {
        return Err(Error::Shape(format!(
            "purifier dimension {dp} is smaller than the rank of the state (eigenvalue {k} is {:e})",
            eig.eigenvalues[k]
        )));
    }
    let r = d.min(dp);
    let q = eig.eigenvectors.as_dmatrix();
    // Q_r √Λ_r; eigenvalues at rounding level would leak O(1e-8) amplitudes
    let sq = DMatrix::from_fn(d, r, |s, k| {
        let l = eig.eigenvalues[k];
        if l > EIGEN_NOISE { q[(s, k)] * l.sqrt() } else { C64::new(0.0, 0.0) }
    });
    let target = phi_prime.as_matrix(split);
    let x = ComplexMatrix::from_dmatrix_unchecked(target.as_dmatrix().adjoint() * &sq);
    let (u, _, w) = svd(&x);
    // co-isometry V = W U†, purification Φ = Q_r √Λ_r V
    let v = w.as_dmatrix() * u.as_dmatrix().adjoint();
    let phi = sq * v;
    let amps: Vec<C64> = (0..d).flat_map(|s| (0..dp).map(move |p| (s, p))).map(|(s, p)| phi[(s, p)]).collect();
    Ok(PureStateVector::normalized(amps, phi_prime.factor_dims().to_vec())?.with_canonical_phase())
}

/// Extension `ρ^ext` of `rho` on `system ⊗ ancilla` with
/// `F(ρ^ext, ρ'^ext) = F(rho, Tr_anc ρ'^ext)`.
///
/// Purifies `rho_prime_ext`, aligns a purification of `rho` with it and
/// traces out the purifying factor.
pub fn lemma_extension(
    rho: &DensityMatrix,
    rho_prime_ext: &DensityMatrix,
    system_dims: &[usize],
    ancilla_dims: &[usize],
) -> Result<DensityMatrix> {
    let d: usize = system_dims.iter().product();
    let da: usize = ancilla_dims.iter().product();
    if rho.dim() != d || rho_prime_ext.dim() != d * da {
        return Err(Error::Shape(format!(
            "state of dimension {} and extension of dimension {} do not fit system {system_dims:?} and ancilla {ancilla_dims:?}",
            rho.dim(),
            rho_prime_ext.dim()
        )));
    }
    let rho = rho.clone().with_factor_dims(system_dims.to_vec())?;
    let mut ext_dims = system_dims.to_vec();
    ext_dims.extend_from_slice(ancilla_dims);
    let target = rho_prime_ext.clone().with_factor_dims(ext_dims.clone())?;
    let phi_prime = canonical_purification(&target)?;
    let phi = optimal_purification(&rho, &phi_prime)?;
    Ok(phi.reduced_leading(ext_dims.len()))
}
