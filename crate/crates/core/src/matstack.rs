//! Dense complex linear algebra.
//!
//! Tensor factors follow a single convention everywhere in the crate: the
//! left factor is the most significant (slow) index, so for `A ⊗ B` the row
//! index is `i_a * rows(B) + i_b`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest matrix dimension any operation is allowed to materialise.
pub const DEFAULT_MAX_DIM: usize = 1 << 14;

/// Maximum absolute deviation from Hermiticity accepted as input.
pub const HERMITIAN_TOL: f64 = 1e-9;

/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as numerical noise and set to 0.
pub const PSD_CLAMP: f64 = 1e-9;

/// Eigenvalues below `-PSD_REJECT` make a matrix non-PSD.
pub const PSD_REJECT: f64 = 1e-6;

/// Dense complex matrix with all entries finite.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix({}x{})", self.rows(), self.cols())?;
        if self.rows() * self.cols() <= 64 {
            write!(f, "{}", self.0)?;
        }
        Ok(())
    }
}

impl ComplexMatrix {
    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if entries.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Self::from_dmatrix(DMatrix::from_row_slice(rows, cols, &entries))
    }

    /// Wraps an nalgebra matrix, rejecting empty shapes and non-finite entries.
    pub fn from_dmatrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::Shape("empty matrix".into()));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Validation("matrix has non-finite entries".into()));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_dmatrix_unchecked(m: DMatrix<C64>) -> Self {
        debug_assert!(m.nrows() > 0 && m.ncols() > 0);
        Self(m)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self(DMatrix::from_fn(rows, cols, f))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// Diagonal matrix with real entries.
    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { C64::new(values[i], 0.0) } else { C64::new(0.0, 0.0) })
    }

    /// Projector `|v⟩⟨v|` (no normalisation applied).
    pub fn outer(v: &[C64]) -> Self {
        let n = v.len();
        Self::from_fn(n, n, |i, j| v[i] * v[j].conj())
    }

    /// Column vector.
    pub fn column(v: &[C64]) -> Self {
        Self::from_fn(v.len(), 1, |i, _| v[i])
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.0
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    pub fn scale_complex(&self, s: C64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise deviation `|m_ij - conj(m_ji)|`.
    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    /// `(m + m†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()).map(|z| z * 0.5))
    }

    /// Sum of singular values.
    pub fn trace_norm(&self) -> f64 {
        singular_values(self).iter().sum()
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        singular_values(self).first().copied().unwrap_or(0.0)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols() != other.rows() {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(Self(&self.0 * &other.0))
    }

    /// `m v` for a vector given as a slice.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols(), v.len(), "vector length mismatch");
        (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.0[(i, j)] * v[j]).sum())
            .collect()
    }

    /// Columns `start..start+count`.
    pub fn columns(&self, start: usize, count: usize) -> Self {
        Self(self.0.columns(start, count).into_owned())
    }

    pub fn column_vec(&self, j: usize) -> Vec<C64> {
        self.0.column(j).iter().copied().collect()
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.rows() == other.rows()
            && self.cols() == other.cols()
            && self.0.iter().zip(other.0.iter()).all(|(a, b)| (a - b).norm() <= tol)
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

/// Panics on shape mismatch; use [`ComplexMatrix::matmul`] for a checked product.
impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
#[derive(Clone, Debug)]
pub struct EigDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Unitary matrix whose columns are the eigenvectors.
    pub eigenvectors: ComplexMatrix,
}

impl EigDecomposition {
    /// `V f(Λ) V†`.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let v = self.eigenvectors.as_dmatrix();
        let n = v.nrows();
        let mut scaled = v.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            let fl = f(l);
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= fl);
        }
        let out = scaled * v.adjoint();
        debug_assert_eq!(out.nrows(), n);
        ComplexMatrix(out)
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.map_eigenvalues(|l| l)
    }
}

pub fn check_dim(dim: usize, max_dim: usize) -> Result<()> {
    if dim > max_dim {
        Err(Error::Size { dim, max: max_dim })
    } else {
        Ok(())
    }
}

/// Kronecker product `a ⊗ b` under the default dimension guard.
pub fn tensor_product(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    tensor_product_within(a, b, DEFAULT_MAX_DIM)
}

pub fn tensor_product_within(a: &ComplexMatrix, b: &ComplexMatrix, max_dim: usize) -> Result<ComplexMatrix> {
    let rows = a.rows().saturating_mul(b.rows());
    let cols = a.cols().saturating_mul(b.cols());
    check_dim(rows.max(cols), max_dim)?;
    Ok(ComplexMatrix(a.0.kronecker(&b.0)))
}

/// Kronecker product of a non-empty list of matrices, left to right.
pub fn tensor_product_all(factors: &[&ComplexMatrix], max_dim: usize) -> Result<ComplexMatrix> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| Error::Shape("empty tensor product".into()))?;
    let mut acc = (*first).clone();
    for f in rest {
        acc = tensor_product_within(&acc, f, max_dim)?;
    }
    Ok(acc)
}

/// Splits a flat index into mixed-radix digits, most significant first.
pub(crate) fn digits(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = index % d;
        index /= d;
    }
    out
}

pub(crate) fn flat_index(digits: &[usize], dims: &[usize]) -> usize {
    digits.iter().zip(dims).fold(0, |acc, (&x, &d)| acc * d + x)
}

/// Traces out every tensor factor not listed in `keep`.
///
/// The kept factors appear in the output in their original order.
pub fn partial_trace(m: &ComplexMatrix, dims: &[usize], keep: &[usize]) -> Result<ComplexMatrix> {
    let total: usize = dims.iter().product();
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Shape(format!("invalid factor dimensions {dims:?}")));
    }
    if !m.is_square() || m.rows() != total {
        return Err(Error::Shape(format!(
            "factor dimensions {dims:?} do not match a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if keep.is_empty() {
        return Err(Error::Shape("keep set must be non-empty".into()));
    }
    let mut kept = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.len() != keep.len() || kept.iter().any(|&k| k >= dims.len()) {
        return Err(Error::Shape(format!("invalid keep set {keep:?} for {} factors", dims.len())));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|i| !kept.contains(i)).collect();
    let kept_dims: Vec<usize> = kept.iter().map(|&i| dims[i]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&i| dims[i]).collect();
    let nk: usize = kept_dims.iter().product();
    let nt: usize = traced_dims.iter().product();

    // full[a][t] = flat index of (kept digits a, traced digits t)
    let mut full = vec![0usize; nk * nt];
    let mut all = vec![0usize; dims.len()];
    for a in 0..nk {
        let da = digits(a, &kept_dims);
        for (slot, &f) in kept.iter().enumerate() {
            all[f] = da[slot];
        }
        for t in 0..nt {
            let dt = digits(t, &traced_dims);
            for (slot, &f) in traced.iter().enumerate() {
                all[f] = dt[slot];
            }
            full[a * nt + t] = flat_index(&all, dims);
        }
    }
    let src = &m.0;
    let out = DMatrix::from_fn(nk, nk, |a, b| {
        (0..nt).map(|t| src[(full[a * nt + t], full[b * nt + t])]).sum()
    });
    Ok(ComplexMatrix(out))
}

/// Eigendecomposition of a Hermitian matrix.
pub fn hermitian_eig(h: &ComplexMatrix) -> Result<EigDecomposition> {
    if !h.is_square() {
        return Err(Error::Shape(format!("{}x{} matrix is not square", h.rows(), h.cols())));
    }
    let dev = h.hermitian_deviation();
    if dev > HERMITIAN_TOL {
        return Err(Error::Validation(format!("matrix is not Hermitian (deviation {dev:e})")));
    }
    hermitian_eig_unchecked(&h.hermitian_part())
}

/// Eigendecomposition assuming the input is already Hermitian.
pub(crate) fn hermitian_eig_unchecked(h: &ComplexMatrix) -> Result<EigDecomposition> {
    let n = h.rows();
    let eig = SymmetricEigen::try_new(h.0.clone(), f64::EPSILON, 100_000).ok_or(Error::NoConvergence)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(EigDecomposition {
        eigenvalues,
        eigenvectors: ComplexMatrix(vecs),
    })
}

/// Eigendecomposition of a PSD matrix with small negative eigenvalues clamped to 0.
pub fn psd_eig(p: &ComplexMatrix) -> Result<EigDecomposition> {
    let mut eig = hermitian_eig(p)?;
    clamp_psd(&mut eig)?;
    Ok(eig)
}

fn clamp_psd(eig: &mut EigDecomposition) -> Result<()> {
    let min = eig.eigenvalues.last().copied().unwrap_or(0.0);
    if min < -PSD_REJECT {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    if min < -PSD_CLAMP {
        log::debug!("clamping eigenvalue {min:e} to zero");
    }
    eig.eigenvalues.iter_mut().for_each(|l| *l = l.max(0.0));
    Ok(())
}

/// Principal square root of a PSD matrix.
///
/// Eigenvalues at rounding level relative to the largest are treated as zero,
/// since their square roots would otherwise contribute errors near `1e-8`.
pub fn psd_sqrt(p: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = psd_eig(p)?;
    let floor = 16.0 * f64::EPSILON * p.rows() as f64 * eig.eigenvalues.first().copied().unwrap_or(0.0);
    Ok(eig.map_eigenvalues(|l| if l > floor { l.sqrt() } else { 0.0 }))
}

/// Singular values in descending order.
pub fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    let svd = SVD::new(m.0.clone(), false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().map(|x| x.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Thin SVD `m = U Σ V†`, singular values descending.
pub fn svd(m: &ComplexMatrix) -> (ComplexMatrix, Vec<f64>, ComplexMatrix) {
    let svd = SVD::new(m.0.clone(), true, true);
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let u = svd.u.expect("U requested");
    let vt = svd.v_t.expect("V† requested");
    let u = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(vt.ncols(), k, |r, c| vt[(order[c], r)].conj());
    let s = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();
    (ComplexMatrix(u), s, ComplexMatrix(v))
}
