//! Finite-length simulation of typical-subspace compression and of the
//! extension protocol built on top of it.
//!
//! All sequence computations happen in the eigenbasis of the site density
//! matrix, where the typical subspace is spanned by basis strings. A
//! sequence state `σ = ⊗_j A_j` is handled through factors `A_j = Φ_j Φ_j†`,
//! so the projected block `PσP` is never formed on the full space.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{holevo_bound_check, BoundReport};
use crate::error::{Error, Result};
use crate::extopt::{extension_ensemble, ExtensionAssignment};
use crate::fidelity::{trace_norm_squared, PureStateVector};
use crate::matstack::{check_dim, digits, psd_eig, psd_sqrt, ComplexMatrix, C64, DEFAULT_MAX_DIM};
use crate::states::{checked_pow, ensemble_density, product_ensemble, DensityMatrix, Ensemble, SUPPORT_TOL};

/// Above this many sequences, [`Sampling::Auto`] switches to Monte Carlo.
pub const EXACT_ENUMERATION_LIMIT: usize = 4096;

/// Hard limit on explicitly requested exact enumeration.
pub const EXACT_ENUMERATION_MAX: usize = 1 << 20;

/// Rounding allowance when comparing cumulative mass with `1 - eps`.
pub const MASS_SLACK: f64 = 1e-12;

/// Site eigenvalues closer than this are treated as one degenerate level.
const DEGENERACY_TOL: f64 = 1e-12;

/// Eigenvalues of site states below this are dropped from their factors.
const RANK_TOL: f64 = 1e-14;

/// Largest channel dimension for which the compressed ensemble density is
/// accumulated to measure its support.
const SUPPORT_CHECK_MAX_DIM: usize = 1024;

/// Largest number of entries held by the precomputed string operators of the extension protocol.
const STRING_OPERATOR_BUDGET: usize = 1 << 26;

const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubspaceTarget {
    /// Smallest subspace with retained mass at least `1 - eps`.
    Mass(f64),
    /// The `m` most probable strings.
    DimCap(usize),
}

impl SubspaceTarget {
    /// Dimension cap `floor(2^(rate · n))` for a rate budget in qubits per signal.
    pub fn from_rate(rate: f64, n: usize) -> Self {
        let m = (rate * n as f64).exp2().floor();
        Self::DimCap(if m.is_finite() { (m as usize).max(1) } else { usize::MAX })
    }
}

/// Span of the most probable eigenvalue strings of `ρ^⊗n`.
#[derive(Clone, Debug)]
pub struct TypicalSubspace {
    block_length: usize,
    site_eigenvalues: Vec<f64>,
    site_basis: ComplexMatrix,
    strings: Vec<Vec<usize>>,
    probabilities: Vec<f64>,
    retained_mass: f64,
}

impl TypicalSubspace {
    pub fn dim(&self) -> usize {
        self.strings.len()
    }

    pub fn block_length(&self) -> usize {
        self.block_length
    }

    pub fn retained_mass(&self) -> f64 {
        self.retained_mass
    }

    pub fn site_dim(&self) -> usize {
        self.site_eigenvalues.len()
    }

    /// Eigenvalues of the site state, descending, degenerate levels snapped to their mean.
    pub fn site_eigenvalues(&self) -> &[f64] {
        &self.site_eigenvalues
    }

    /// Site eigenvectors as columns, in the order of [`Self::site_eigenvalues`].
    pub fn site_basis(&self) -> &ComplexMatrix {
        &self.site_basis
    }

    /// Selected strings, most probable first.
    pub fn strings(&self) -> &[Vec<usize>] {
        &self.strings
    }

    pub fn string_probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Basis of the subspace as a `d^n x dim` matrix in the computational basis.
    pub fn basis_matrix(&self) -> Result<ComplexMatrix> {
        let d = self.site_dim();
        let total = checked_pow(d, self.block_length).unwrap_or(usize::MAX);
        check_dim(total, DEFAULT_MAX_DIM)?;
        check_dim(self.dim(), DEFAULT_MAX_DIM)?;
        let v = self.site_basis.as_dmatrix();
        let dims = vec![d; self.block_length];
        let mut b = DMatrix::<C64>::zeros(total, self.dim());
        for (col, s) in self.strings.iter().enumerate() {
            for row in 0..total {
                let x = digits(row, &dims);
                b[(row, col)] = x.iter().zip(s).map(|(&xj, &sj)| v[(xj, sj)]).product();
            }
        }
        Ok(ComplexMatrix::from_dmatrix_unchecked(b))
    }

    /// Basis vectors `⊗_j v_{s_j}`.
    pub fn basis(&self) -> Result<Vec<PureStateVector>> {
        let b = self.basis_matrix()?;
        let dims = vec![self.site_dim(); self.block_length];
        (0..self.dim())
            .map(|j| PureStateVector::normalized(b.column_vec(j), dims.clone()))
            .collect()
    }

    /// Orthogonal projector onto the subspace.
    pub fn projector(&self) -> Result<ComplexMatrix> {
        let b = self.basis_matrix()?;
        b.matmul(&b.adjoint())
    }
}

/// Eigendecomposition with a basis fixed inside each degenerate level:
/// Gram-Schmidt over the projections of the computational basis vectors.
fn canonical_eigensystem(rho: &ComplexMatrix) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let eig = psd_eig(rho)?;
    let n = eig.eigenvalues.len();
    let v = eig.eigenvectors.as_dmatrix();
    let mut values = eig.eigenvalues.clone();
    let mut basis = DMatrix::<C64>::zeros(n, n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[end - 1] - values[end] <= DEGENERACY_TOL {
            end += 1;
        }
        let mean = values[start..end].iter().sum::<f64>() / (end - start) as f64;
        values[start..end].iter_mut().for_each(|l| *l = mean);

        let group = v.columns(start, end - start);
        let mut chosen: Vec<nalgebra::DVector<C64>> = Vec::with_capacity(end - start);
        for j in 0..n {
            if chosen.len() == end - start {
                break;
            }
            // projection of e_j onto the level
            let coeffs: Vec<C64> = (0..group.ncols()).map(|c| group[(j, c)].conj()).collect();
            let mut w = nalgebra::DVector::<C64>::zeros(n);
            for (c, &k) in coeffs.iter().enumerate() {
                w += group.column(c) * k;
            }
            for u in &chosen {
                let overlap = u.dotc(&w);
                w -= u * overlap;
            }
            let norm = w.norm();
            if norm > 1e-3 {
                chosen.push(w / C64::new(norm, 0.0));
            }
        }
        if chosen.len() < end - start {
            log::warn!("canonical basis incomplete for a degenerate level; keeping solver vectors");
            chosen = (0..group.ncols()).map(|c| group.column(c).into_owned()).collect();
        }
        for (offset, u) in chosen.into_iter().enumerate() {
            basis.set_column(start + offset, &u);
        }
        start = end;
    }
    Ok((values, basis))
}

/// Typical subspace of `rho^⊗n` for the given target.
///
/// Strings are ranked by probability, computed from occupation counts so
/// that permuted strings tie exactly; ties go to the lexicographically
/// smaller string.
pub fn typical_subspace(
    rho: &DensityMatrix,
    n: usize,
    target: SubspaceTarget,
    max_dim: usize,
) -> Result<TypicalSubspace> {
    if n == 0 {
        return Err(Error::Validation("block length must be positive".into()));
    }
    let d = rho.dim();
    let total = checked_pow(d, n).ok_or(Error::Size {
        dim: usize::MAX,
        max: max_dim,
    })?;
    check_dim(total, max_dim)?;
    match target {
        SubspaceTarget::Mass(eps) if !(0.0..1.0).contains(&eps) => {
            return Err(Error::Validation(format!("eps must lie in [0, 1), got {eps}")));
        }
        SubspaceTarget::DimCap(0) => return Err(Error::Validation("dimension cap must be positive".into())),
        _ => {}
    }
    let (values, basis) = canonical_eigensystem(rho.matrix())?;
    let dims = vec![d; n];
    let prob_of = |s: &[usize]| {
        let mut counts = vec![0i32; d];
        s.iter().for_each(|&x| counts[x] += 1);
        counts.iter().zip(&values).map(|(&c, &l)| l.powi(c)).product::<f64>()
    };
    let probs: Vec<f64> = (0..total).map(|i| prob_of(&digits(i, &dims))).collect();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));

    let m = match target {
        SubspaceTarget::DimCap(m) => {
            if m > total {
                log::warn!("dimension cap {m} exceeds the block dimension {total}");
            }
            m.min(total)
        }
        SubspaceTarget::Mass(eps) => {
            let goal = 1.0 - eps - MASS_SLACK;
            let mut acc = 0.0;
            let mut m = total;
            for (k, &i) in order.iter().enumerate() {
                acc += probs[i];
                if acc >= goal {
                    m = k + 1;
                    break;
                }
            }
            m
        }
    };
    let chosen = &order[..m];
    let probabilities: Vec<f64> = chosen.iter().map(|&i| probs[i]).collect();
    Ok(TypicalSubspace {
        block_length: n,
        retained_mass: probabilities.iter().sum::<f64>().min(1.0),
        site_eigenvalues: values,
        site_basis: ComplexMatrix::from_dmatrix_unchecked(basis),
        strings: chosen.iter().map(|&i| digits(i, &dims)).collect(),
        probabilities,
    })
}

/// `Λ(σ) = PσP + Tr[(I - P)σ] |b_0⟩⟨b_0|`, with `b_0` the most probable basis string.
pub fn js_compress_sequence(seq: &DensityMatrix, ts: &TypicalSubspace) -> Result<DensityMatrix> {
    let b = ts.basis_matrix()?;
    if seq.dim() != b.rows() {
        return Err(Error::Shape(format!(
            "sequence of dimension {} does not match the block dimension {}",
            seq.dim(),
            b.rows()
        )));
    }
    let local = b.adjoint().matmul(seq.matrix())?.matmul(&b)?;
    let kept = local.trace().re;
    let mut inner = local.into_dmatrix();
    inner[(0, 0)] += C64::new((1.0 - kept).max(0.0), 0.0);
    let out = b.matmul(&ComplexMatrix::from_dmatrix_unchecked(inner))?.matmul(&b.adjoint())?;
    Ok(DensityMatrix::from_matrix_unchecked(
        out.hermitian_part(),
        vec![ts.site_dim(); ts.block_length],
    ))
}

/// `Φ` with `A = Φ Φ†` after the change of basis `A ↦ U† A U`.
fn factor_in_basis(a: &ComplexMatrix, u: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let rotated = ComplexMatrix::from_dmatrix_unchecked(u.adjoint() * a.as_dmatrix() * u).hermitian_part();
    let eig = psd_eig(&rotated)?;
    let r = eig.eigenvalues.iter().filter(|&&l| l > RANK_TOL).count().max(1);
    let q = eig.eigenvectors.as_dmatrix();
    Ok(DMatrix::from_fn(q.nrows(), r, |s, k| q[(s, k)] * eig.eigenvalues[k].max(0.0).sqrt()))
}

/// Rows of `⊗_j Φ_{seq_j}` belonging to the typical strings.
fn projected_factor(ts: &TypicalSubspace, factors: &[DMatrix<C64>], seq: &[usize]) -> DMatrix<C64> {
    let ranks: Vec<usize> = seq.iter().map(|&i| factors[i].ncols()).collect();
    let cols: usize = ranks.iter().product();
    let mut out = DMatrix::<C64>::zeros(ts.dim(), cols);
    for c in 0..cols {
        let cd = digits(c, &ranks);
        for (row, s) in ts.strings.iter().enumerate() {
            out[(row, c)] = seq
                .iter()
                .zip(s)
                .zip(&cd)
                .map(|((&i, &sj), &cj)| factors[i][(sj, cj)])
                .product();
        }
    }
    out
}

/// `Γ = [F_P, √(1-q) e_0]`, so that `Λ(σ)` restricted to the subspace is `Γ Γ†`.
fn output_factor(fp: &DMatrix<C64>) -> (DMatrix<C64>, f64) {
    let q = fp.norm_squared().min(1.0);
    let mut gamma = fp.clone().insert_column(fp.ncols(), C64::new(0.0, 0.0));
    gamma[(0, fp.ncols())] = C64::new((1.0 - q).max(0.0).sqrt(), 0.0);
    (gamma, q)
}

/// `F(σ, Λ(σ)) = F(PσP, Λ(σ))` since `Λ(σ)` lives inside the subspace.
fn projected_fidelity(fp: &DMatrix<C64>, gamma: &DMatrix<C64>) -> Result<f64> {
    let k = if fp.ncols() <= fp.nrows() {
        fp.adjoint() * gamma
    } else {
        let c = ComplexMatrix::from_dmatrix_unchecked(fp * fp.adjoint()).hermitian_part();
        psd_sqrt(&c)?.into_dmatrix() * gamma
    };
    Ok(trace_norm_squared(&ComplexMatrix::from_dmatrix_unchecked(k)).clamp(0.0, 1.0))
}

/// How transmitted sequences are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Exact below [`EXACT_ENUMERATION_LIMIT`] sequences, Monte Carlo above.
    Auto { samples: usize, seed: u64 },
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for Sampling {
    fn default() -> Self {
        Self::Auto { samples: 2000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequenceRecord {
    /// Signal indices of the sequence (block indices for the extension protocol).
    pub indices: Vec<usize>,
    pub probability: f64,
    pub fidelity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolResult {
    /// Source signals per transmitted sequence.
    pub block_length: usize,
    pub channel_dim: usize,
    /// Qubits per source signal.
    pub rate: f64,
    pub retained_mass: f64,
    pub avg_fidelity: f64,
    /// Standard error of `avg_fidelity` when sampled.
    pub std_error: Option<f64>,
    pub sampled: bool,
    /// Average fidelity on the extended sequences, before the ancillas are discarded.
    pub extension_fidelity: Option<f64>,
    pub per_sequence: Vec<SequenceRecord>,
    pub bounds: Vec<BoundReport>,
}

/// `log₂(channel_dim) / signals`.
pub fn rate_of(channel_dim: usize, signals: usize) -> f64 {
    (channel_dim as f64).log2() / signals as f64
}

/// Sequences to evaluate with their averaging weights.
struct Plan {
    sequences: Vec<(Vec<usize>, f64)>,
    weights: Vec<f64>,
    sampled: bool,
}

fn plan(probs: &[f64], n: usize, sampling: Sampling) -> Result<Plan> {
    let count = checked_pow(probs.len(), n);
    let exact = match sampling {
        Sampling::Exact => true,
        Sampling::MonteCarlo { .. } => false,
        Sampling::Auto { .. } => count.is_some_and(|c| c <= EXACT_ENUMERATION_LIMIT),
    };
    let dims = vec![probs.len(); n];
    let prob_of = |s: &[usize]| s.iter().map(|&i| probs[i]).product::<f64>();
    if exact {
        let count = count
            .filter(|&c| c <= EXACT_ENUMERATION_MAX)
            .ok_or(Error::Size {
                dim: count.unwrap_or(usize::MAX),
                max: EXACT_ENUMERATION_MAX,
            })?;
        let sequences: Vec<(Vec<usize>, f64)> = (0..count)
            .map(|i| {
                let s = digits(i, &dims);
                let p = prob_of(&s);
                (s, p)
            })
            .collect();
        let weights = sequences.iter().map(|(_, p)| *p).collect();
        return Ok(Plan {
            sequences,
            weights,
            sampled: false,
        });
    }
    let (samples, seed) = match sampling {
        Sampling::Auto { samples, seed } | Sampling::MonteCarlo { samples, seed } => (samples, seed),
        Sampling::Exact => unreachable!(),
    };
    if samples == 0 {
        return Err(Error::Validation("Monte Carlo sampling needs at least one sample".into()));
    }
    let dist = WeightedIndex::new(probs).map_err(|e| Error::Validation(e.to_string()))?;
    let sequences: Vec<(Vec<usize>, f64)> = (0..samples)
        .map(|draw| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(draw as u64);
            let s: Vec<usize> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            let p = prob_of(&s);
            (s, p)
        })
        .collect();
    Ok(Plan {
        sequences,
        weights: vec![1.0 / samples as f64; samples],
        sampled: true,
    })
}

/// Per-sequence output of an evaluator.
struct SequenceOutcome {
    fidelity: f64,
    extension_fidelity: Option<f64>,
    gamma: DMatrix<C64>,
}

struct Aggregate {
    records: Vec<SequenceRecord>,
    avg: f64,
    std_error: Option<f64>,
    extension_avg: Option<f64>,
    compressed_density: Option<DMatrix<C64>>,
}

/// Evaluates all planned sequences in fixed chunks and sums in plan order,
/// so results do not depend on thread scheduling.
fn aggregate<F>(plan: &Plan, m: usize, eval: F) -> Result<Aggregate>
where
    F: Fn(&[usize]) -> Result<SequenceOutcome> + Sync,
{
    let track_density = m <= SUPPORT_CHECK_MAX_DIM;
    let idx: Vec<usize> = (0..plan.sequences.len()).collect();
    let chunks = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len());
            let mut density = track_density.then(|| DMatrix::<C64>::zeros(m, m));
            for &i in chunk {
                let o = eval(&plan.sequences[i].0)?;
                if let Some(acc) = density.as_mut() {
                    *acc += (&o.gamma * o.gamma.adjoint()) * C64::new(plan.weights[i], 0.0);
                }
                out.push((o.fidelity, o.extension_fidelity));
            }
            Ok((out, density))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(plan.sequences.len());
    let mut fids = Vec::with_capacity(plan.sequences.len());
    let mut ext = Vec::new();
    let mut density = track_density.then(|| DMatrix::<C64>::zeros(m, m));
    for (out, part) in chunks {
        for (f, e) in out {
            let (indices, probability) = &plan.sequences[records.len()];
            records.push(SequenceRecord {
                indices: indices.clone(),
                probability: *probability,
                fidelity: f,
            });
            fids.push(f);
            if let Some(e) = e {
                ext.push(e);
            }
        }
        if let (Some(acc), Some(part)) = (density.as_mut(), part) {
            *acc += part;
        }
    }
    let avg: f64 = fids.iter().zip(&plan.weights).map(|(f, w)| f * w).sum();
    let std_error = plan.sampled.then(|| {
        let n = fids.len() as f64;
        if fids.len() < 2 {
            return 0.0;
        }
        let var = fids.iter().map(|f| (f - avg).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    let extension_avg =
        (ext.len() == fids.len()).then(|| ext.iter().zip(&plan.weights).map(|(f, w)| f * w).sum::<f64>());
    Ok(Aggregate {
        records,
        avg: avg.clamp(0.0, 1.0),
        std_error,
        extension_avg,
        compressed_density: density,
    })
}

/// `rate >= log₂ support(compressed ensemble density) / signals`.
fn support_rate_report(density: Option<&DMatrix<C64>>, rate: f64, signals: usize) -> Result<BoundReport> {
    let Some(d) = density else {
        let mut r = BoundReport::new("support-rate", 0.0, rate);
        r.applicable = false;
        return Ok(r);
    };
    let eig = psd_eig(&ComplexMatrix::from_dmatrix_unchecked(d.clone()).hermitian_part())?;
    let support = eig.eigenvalues.iter().filter(|&&l| l > SUPPORT_TOL).count().max(1);
    Ok(BoundReport::new("support-rate", rate_of(support, signals), rate))
}

/// Jozsa-Schumacher compression of length-`n` sequences from `e0`.
pub fn js_protocol(
    e0: &Ensemble,
    n: usize,
    target: SubspaceTarget,
    sampling: Sampling,
    max_dim: usize,
) -> Result<ProtocolResult> {
    let ts = typical_subspace(&ensemble_density(e0), n, target, max_dim)?;
    let u = ts.site_basis.as_dmatrix();
    let factors = e0
        .states()
        .iter()
        .map(|s| factor_in_basis(s.matrix(), u))
        .collect::<Result<Vec<_>>>()?;
    let plan = plan(e0.probs(), n, sampling)?;
    let agg = aggregate(&plan, ts.dim(), |seq| {
        let fp = projected_factor(&ts, &factors, seq);
        let (gamma, _) = output_factor(&fp);
        Ok(SequenceOutcome {
            fidelity: projected_fidelity(&fp, &gamma)?,
            extension_fidelity: None,
            gamma,
        })
    })?;
    let rate = rate_of(ts.dim(), n);
    let bounds = vec![
        support_rate_report(agg.compressed_density.as_ref(), rate, n)?,
        holevo_bound_check(e0, rate, agg.avg),
    ];
    Ok(ProtocolResult {
        block_length: n,
        channel_dim: ts.dim(),
        rate,
        retained_mass: ts.retained_mass,
        avg_fidelity: agg.avg,
        std_error: agg.std_error,
        sampled: plan.sampled,
        extension_fidelity: None,
        per_sequence: agg.records,
        bounds,
    })
}

/// Extension protocol: each block of `n_block` signals is replaced by its
/// extension, `k` blocks are compressed jointly and the receiver discards the
/// ancillas. Fidelity is measured against the unextended sequences and the
/// rate is per source signal.
pub fn extension_protocol(
    e0: &Ensemble,
    n_block: usize,
    assignment: &ExtensionAssignment,
    k: usize,
    target: SubspaceTarget,
    sampling: Sampling,
    max_dim: usize,
) -> Result<ProtocolResult> {
    if k == 0 {
        return Err(Error::Validation("number of blocks must be positive".into()));
    }
    let block = product_ensemble(e0, n_block, max_dim)?;
    let ext = extension_ensemble(&block, assignment)?;
    let (db, da) = (block.dim(), assignment.ancilla_dim);
    let site = db * da;
    let full = checked_pow(site, k).ok_or(Error::Size {
        dim: usize::MAX,
        max: max_dim,
    })?;
    check_dim(full, max_dim)?;
    let ts = typical_subspace(&ensemble_density(&ext), k, target, max_dim)?;
    let m = ts.dim();
    let u = ts.site_basis.as_dmatrix();
    let ext_factors = ext
        .states()
        .iter()
        .map(|s| factor_in_basis(s.matrix(), u))
        .collect::<Result<Vec<_>>>()?;
    let id = DMatrix::<C64>::identity(db, db);
    let orig_factors = block
        .states()
        .iter()
        .map(|s| factor_in_basis(s.matrix(), &id))
        .collect::<Result<Vec<_>>>()?;

    // basis string s as an operator from ancillas to systems: ⊗_j reshape(v_{s_j})
    if m.saturating_mul(full) > STRING_OPERATOR_BUDGET {
        return Err(Error::Size {
            dim: m.saturating_mul(full),
            max: STRING_OPERATOR_BUDGET,
        });
    }
    let site_ops: Vec<DMatrix<C64>> = (0..site)
        .map(|s| DMatrix::from_fn(db, da, |x, a| u[(x * da + a, s)]))
        .collect();
    let string_ops: Vec<DMatrix<C64>> = ts
        .strings
        .iter()
        .map(|s| {
            s[1..]
                .iter()
                .fold(site_ops[s[0]].clone(), |acc, &sj| acc.kronecker(&site_ops[sj]))
        })
        .collect();
    let (rows, anc) = (string_ops[0].nrows(), string_ops[0].ncols());

    let plan = plan(block.probs(), k, sampling)?;
    let agg = aggregate(&plan, m, |seq| {
        let fp = projected_factor(&ts, &ext_factors, seq);
        let (gamma, _) = output_factor(&fp);
        let extension_fidelity = projected_fidelity(&fp, &gamma)?;

        // receiver's state Tr_anc Λ(σ_ext) = Γ_Y Γ_Y†
        let mut gamma_y = DMatrix::<C64>::zeros(rows, gamma.ncols() * anc);
        for col in 0..gamma.ncols() {
            let mut r = DMatrix::<C64>::zeros(rows, anc);
            for (s, op) in string_ops.iter().enumerate() {
                let c = gamma[(s, col)];
                if c != C64::new(0.0, 0.0) {
                    r += op * c;
                }
            }
            gamma_y.view_mut((0, col * anc), (rows, anc)).copy_from(&r);
        }
        let g = seq[1..]
            .iter()
            .fold(orig_factors[seq[0]].clone(), |acc, &i| acc.kronecker(&orig_factors[i]));
        let overlap = ComplexMatrix::from_dmatrix_unchecked(g.adjoint() * gamma_y);
        Ok(SequenceOutcome {
            fidelity: trace_norm_squared(&overlap).clamp(0.0, 1.0),
            extension_fidelity: Some(extension_fidelity),
            gamma,
        })
    })?;

    let signals = n_block * k;
    let rate = rate_of(m, signals);
    let ext_avg = agg.extension_avg.expect("extension fidelities recorded");
    // the receiver's partial trace cannot lower fidelity, draw by draw
    let monotone = BoundReport::new("fidelity-monotonicity", ext_avg, agg.avg);
    let bounds = vec![
        support_rate_report(agg.compressed_density.as_ref(), rate, signals)?,
        monotone,
        holevo_bound_check(e0, rate, agg.avg),
    ];
    Ok(ProtocolResult {
        block_length: signals,
        channel_dim: m,
        rate,
        retained_mass: ts.retained_mass,
        avg_fidelity: agg.avg,
        std_error: agg.std_error,
        sampled: plan.sampled,
        extension_fidelity: Some(ext_avg),
        per_sequence: agg.records,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fidelity::fidelity;
    use crate::matstack::{partial_trace, tensor_product_all};
    use crate::random::{random_density, random_ensemble};

    fn ket(v: &[f64]) -> DensityMatrix {
        let amps: Vec<C64> = v.iter().map(|&x| C64::new(x, 0.0)).collect();
        DensityMatrix::pure(&amps).unwrap()
    }

    fn pure_pair() -> Ensemble {
        let s = 1.0 / 2f64.sqrt();
        Ensemble::new(vec![0.5, 0.5], vec![ket(&[1.0, 0.0]), ket(&[s, s])]).unwrap()
    }

    fn orthogonal_pair() -> Ensemble {
        Ensemble::new(
            vec![0.5, 0.5],
            vec![
                DensityMatrix::diagonal(&[0.5, 0.5, 0.0, 0.0]).unwrap(),
                DensityMatrix::diagonal(&[0.0, 0.0, 0.5, 0.5]).unwrap(),
            ],
        )
        .unwrap()
    }

    fn binom(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    fn product_state(states: &[&DensityMatrix]) -> DensityMatrix {
        let ms: Vec<&ComplexMatrix> = states.iter().map(|s| s.matrix()).collect();
        DensityMatrix::from_matrix(tensor_product_all(&ms, DEFAULT_MAX_DIM).unwrap()).unwrap()
    }

    #[test]
    fn pure_state_subspace_is_one_dimensional() {
        let rho = ket(&[0.6, 0.8]);
        let ts = typical_subspace(&rho, 5, SubspaceTarget::Mass(0.01), DEFAULT_MAX_DIM).unwrap();
        assert_eq!(ts.dim(), 1);
        assert!((ts.retained_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binomial_tail_numbers() {
        let rho = DensityMatrix::diagonal(&[0.9, 0.1]).unwrap();
        let ts = typical_subspace(&rho, 10, SubspaceTarget::DimCap(176), DEFAULT_MAX_DIM).unwrap();
        let want: f64 = (0..=3).map(|k| binom(10, k) * 0.9f64.powi(10 - k as i32) * 0.1f64.powi(k as i32)).sum();
        assert!((ts.retained_mass() - want).abs() < 1e-12);
        assert!((ts.retained_mass() - 0.987205).abs() < 1e-6);
        assert!(ts.strings().iter().all(|s| s.iter().filter(|&&x| x == 1).count() <= 3));
        assert!((rate_of(ts.dim(), 10) - 176f64.log2() / 10.0).abs() < 1e-15);
        assert!((rate_of(ts.dim(), 10) - 0.745943).abs() < 1e-6);
    }

    #[test]
    fn flat_spectrum_does_not_compress() {
        let ts = typical_subspace(&DensityMatrix::maximally_mixed(2), 4, SubspaceTarget::Mass(1e-9), DEFAULT_MAX_DIM)
            .unwrap();
        assert_eq!(ts.dim(), 16);
    }

    #[test]
    fn projector_matches_retained_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_density(&mut rng, 3);
        let ts = typical_subspace(&rho, 3, SubspaceTarget::Mass(0.2), DEFAULT_MAX_DIM).unwrap();
        let p = ts.projector().unwrap();
        assert!(p.matmul(&p).unwrap().approx_eq(&p, 1e-9));
        assert!(p.is_hermitian(1e-9));
        assert!((p.trace().re - ts.dim() as f64).abs() < 1e-9);
        let big = product_state(&[&rho, &rho, &rho]);
        let mass = p.matmul(big.matrix()).unwrap().trace().re;
        assert!((mass - ts.retained_mass()).abs() < 1e-10);
        assert_eq!(ts.basis().unwrap().len(), ts.dim());
    }

    #[test]
    fn degenerate_levels_get_computational_basis() {
        let ts = typical_subspace(&DensityMatrix::maximally_mixed(4), 1, SubspaceTarget::DimCap(4), DEFAULT_MAX_DIM)
            .unwrap();
        assert!(ts.site_basis().approx_eq(&ComplexMatrix::identity(4), 1e-12));
    }

    #[test]
    fn compression_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = random_density(&mut rng, 2);
        let ts = typical_subspace(&rho, 2, SubspaceTarget::DimCap(2), DEFAULT_MAX_DIM).unwrap();
        let b = ts.basis_matrix().unwrap();

        let inside = DensityMatrix::pure(&b.column_vec(1)).unwrap();
        let out = js_compress_sequence(&inside, &ts).unwrap();
        assert!(out.matrix().approx_eq(inside.matrix(), 1e-10));

        let full = &ComplexMatrix::identity(4) - &ts.projector().unwrap();
        let outside = DensityMatrix::from_matrix(full.scale(0.5)).unwrap();
        let out = js_compress_sequence(&outside, &ts).unwrap();
        let junk = DensityMatrix::pure(&b.column_vec(0)).unwrap();
        assert!(out.matrix().approx_eq(junk.matrix(), 1e-10));

        let seq = random_density(&mut rng, 4);
        let out = js_compress_sequence(&seq, &ts).unwrap();
        assert!((out.matrix().trace().re - 1.0).abs() < 1e-10);
        assert!(DensityMatrix::new(out.matrix().clone(), vec![4]).is_ok());
    }

    #[test]
    fn factored_fidelity_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random_ensemble(&mut rng, 3, 2);
        let n = 3;
        let res = js_protocol(&e, n, SubspaceTarget::DimCap(3), Sampling::Exact, DEFAULT_MAX_DIM).unwrap();
        let ts = typical_subspace(&ensemble_density(&e), n, SubspaceTarget::DimCap(3), DEFAULT_MAX_DIM).unwrap();
        let mut avg = 0.0;
        for rec in &res.per_sequence {
            let parts: Vec<&DensityMatrix> = rec.indices.iter().map(|&i| &e.states()[i]).collect();
            let seq = product_state(&parts);
            let f = fidelity(&seq, &js_compress_sequence(&seq, &ts).unwrap()).unwrap();
            assert!((f - rec.fidelity).abs() < 1e-9, "{f} vs {}", rec.fidelity);
            avg += rec.probability * f;
        }
        assert!((avg - res.avg_fidelity).abs() < 1e-9);
        assert_eq!(res.per_sequence.len(), 27);
    }

    #[test]
    fn single_pure_source() {
        let e = Ensemble::single(ket(&[0.6, 0.8]));
        let res = js_protocol(&e, 6, SubspaceTarget::Mass(0.01), Sampling::default(), DEFAULT_MAX_DIM).unwrap();
        assert_eq!(res.channel_dim, 1);
        assert_eq!(res.rate, 0.0);
        assert!((res.avg_fidelity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_mixed_source_fidelity_against_mass() {
        // with the squared fidelity the guaranteed bound is q², and √F ≥ q
        let e = Ensemble::single(DensityMatrix::diagonal(&[0.9, 0.1]).unwrap());
        let res = js_protocol(&e, 10, SubspaceTarget::DimCap(176), Sampling::default(), DEFAULT_MAX_DIM).unwrap();
        let q = res.retained_mass;
        assert!(res.avg_fidelity >= q * q - 1e-9);
        assert!(res.avg_fidelity.sqrt() >= q - 1e-9);
        let p0 = 0.9f64.powi(10);
        let want = (q - p0 + (p0 * (p0 + 1.0 - q)).sqrt()).powi(2);
        assert!((res.avg_fidelity - want).abs() < 1e-10);
    }

    #[test]
    fn pure_pair_fidelity_formula() {
        let e = pure_pair();
        let res = js_protocol(&e, 4, SubspaceTarget::from_rate(0.65, 4), Sampling::Exact, DEFAULT_MAX_DIM).unwrap();
        assert_eq!(res.channel_dim, 6);
        // pure sequences: F = q² + (1 - q)|⟨b_0|ψ⟩|²
        let ts = typical_subspace(&ensemble_density(&e), 4, SubspaceTarget::DimCap(6), DEFAULT_MAX_DIM).unwrap();
        let b = ts.basis_matrix().unwrap();
        for rec in &res.per_sequence {
            let parts: Vec<&DensityMatrix> = rec.indices.iter().map(|&i| &e.states()[i]).collect();
            let seq = product_state(&parts);
            let local = b.adjoint().matmul(seq.matrix()).unwrap().matmul(&b).unwrap();
            let q = local.trace().re;
            let f = q * q + (1.0 - q) * local.get(0, 0).re;
            assert!((f - rec.fidelity).abs() < 1e-10);
        }
    }

    #[test]
    fn monte_carlo_is_seeded() {
        let e = random_ensemble(&mut ChaCha8Rng::seed_from_u64(6), 3, 2);
        let s = Sampling::MonteCarlo { samples: 400, seed: 9 };
        let a = js_protocol(&e, 6, SubspaceTarget::DimCap(12), s, DEFAULT_MAX_DIM).unwrap();
        let b = js_protocol(&e, 6, SubspaceTarget::DimCap(12), s, DEFAULT_MAX_DIM).unwrap();
        assert_eq!(a, b);
        assert!(a.sampled && a.std_error.unwrap() > 0.0);
        let exact = js_protocol(&e, 6, SubspaceTarget::DimCap(12), Sampling::Exact, DEFAULT_MAX_DIM).unwrap();
        assert!((a.avg_fidelity - exact.avg_fidelity).abs() < 5.0 * a.std_error.unwrap());
    }

    #[test]
    fn auto_sampling_threshold() {
        let e = pure_pair();
        let r = js_protocol(&e, 12, SubspaceTarget::DimCap(10), Sampling::default(), DEFAULT_MAX_DIM).unwrap();
        assert!(!r.sampled);
        let r = js_protocol(&e, 13, SubspaceTarget::DimCap(10), Sampling::default(), DEFAULT_MAX_DIM).unwrap();
        assert!(r.sampled);
    }

    #[test]
    fn rate_examples() {
        assert_eq!(rate_of(1, 7), 0.0);
        assert!((rate_of(176, 10) - 0.74594).abs() < 1e-5);
        assert!((rate_of(1 << 9, 9) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_extension_reproduces_js() {
        for (e, n, target) in [
            (pure_pair(), 4, SubspaceTarget::Mass(0.1)),
            (orthogonal_pair(), 3, SubspaceTarget::Mass(0.05)),
            (orthogonal_pair(), 2, SubspaceTarget::DimCap(5)),
        ] {
            let js = js_protocol(&e, n, target, Sampling::Exact, DEFAULT_MAX_DIM).unwrap();
            let a = ExtensionAssignment::trivial(&e, 2, e.dim() * 2);
            let ep = extension_protocol(&e, 1, &a, n, target, Sampling::Exact, DEFAULT_MAX_DIM).unwrap();
            assert_eq!(js.channel_dim, ep.channel_dim);
            assert!((js.rate - ep.rate).abs() < 1e-12);
            assert!((js.avg_fidelity - ep.avg_fidelity).abs() < 1e-9, "{} {}", js.avg_fidelity, ep.avg_fidelity);
            assert!(ep.bounds.iter().all(|b| b.passed()), "{:?}", ep.bounds);
        }
    }

    #[test]
    fn extension_output_matches_dense_partial_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_ensemble(&mut rng, 2, 2);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let mut a = ExtensionAssignment::trivial(&e, 2, 4);
        for p in a.params.iter_mut() {
            p.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        }
        let k = 2;
        let target = SubspaceTarget::DimCap(5);
        let res = extension_protocol(&e, 1, &a, k, target, Sampling::Exact, DEFAULT_MAX_DIM).unwrap();
        let ext = extension_ensemble(&e, &a).unwrap();
        let ts = typical_subspace(&ensemble_density(&ext), k, target, DEFAULT_MAX_DIM).unwrap();
        for rec in &res.per_sequence {
            let ext_parts: Vec<&DensityMatrix> = rec.indices.iter().map(|&i| &ext.states()[i]).collect();
            let out = js_compress_sequence(&product_state(&ext_parts), &ts).unwrap();
            let bob = DensityMatrix::from_matrix(partial_trace(out.matrix(), &[2, 2, 2, 2], &[0, 2]).unwrap()).unwrap();
            let parts: Vec<&DensityMatrix> = rec.indices.iter().map(|&i| &e.states()[i]).collect();
            let f = fidelity(&product_state(&parts), &bob).unwrap();
            assert!((f - rec.fidelity).abs() < 1e-9, "{f} vs {}", rec.fidelity);
        }
        assert!(res.avg_fidelity >= res.extension_fidelity.unwrap() - 1e-9);
    }

    #[test]
    fn purified_single_state_needs_no_channel() {
        let e = Ensemble::single(DensityMatrix::maximally_mixed(2));
        // a maximally entangled extension: rotate the purifier into the ancilla
        let cfg = crate::extopt::OptimizerConfig {
            multistarts: 4,
            max_iters: 400,
            seed: 1,
            ..Default::default()
        };
        let best = crate::extopt::minimize_extension_entropy(&e, &cfg).unwrap();
        let res = extension_protocol(
            &e,
            1,
            &best.best_assignment,
            3,
            SubspaceTarget::Mass(1e-3),
            Sampling::Exact,
            DEFAULT_MAX_DIM,
        )
        .unwrap();
        assert_eq!(res.channel_dim, 1);
        assert_eq!(res.rate, 0.0);
        assert!(res.avg_fidelity > 1.0 - 1e-3);
    }
}
