//! Minimisation of the ensemble entropy over extensions of the signal states.
//!
//! Each signal `ρ_i` (dimension `d`) is extended through its canonical
//! purification `|ψ_i⟩ ∈ H ⊗ R`, an isometry `W_i : R → H_anc ⊗ H_pur` and a
//! trace over the purifier:
//!
//! ```text
//! ρ_i^ext = Tr_pur (I ⊗ W_i) |ψ_i⟩⟨ψ_i| (I ⊗ W_i)†
//! ```
//!
//! With `dim H_pur = d · dim H_anc` every extension on `H ⊗ H_anc` is reachable.
//! `W_i = exp(G) E` where `E` selects the first `r = dim R` columns and
//! `G = [[A, -B†], [B, 0]]` is anti-Hermitian. Because `span{E, [0; B]}` is
//! invariant under `G`, `exp(G) E = E X + [0; B] Y` with
//! `[X; Y] = exp(M)[:, :r]` and `M = [[A, -B†B], [I, 0]]`, so only a `2r x 2r`
//! exponential is ever formed.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::ancilla_cap_within;
use crate::error::{Error, Result};
use crate::matstack::{hermitian_eig_unchecked, partial_trace, ComplexMatrix, C64, DEFAULT_MAX_DIM};
use crate::states::{
    ensemble_density, product_ensemble, spectrum_entropy, von_neumann_entropy, DensityMatrix, Ensemble, SUPPORT_TOL,
};

/// Regularisation `ε` added as `ε I / n` before the logarithm in the gradient.
pub const GRADIENT_REGULARIZATION: f64 = 1e-10;

/// Per-signal isometry parameters defining an extension ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtensionAssignment {
    pub ancilla_dim: usize,
    pub purifier_dim: usize,
    /// One real vector per signal; see [`param_count`].
    pub params: Vec<Vec<f64>>,
}

/// Number of real parameters for a signal of dimension `d`.
pub fn param_count(d: usize, ancilla_dim: usize, purifier_dim: usize) -> usize {
    let big = ancilla_dim * purifier_dim;
    let r = d.min(big);
    r * r + 2 * (big - r) * r
}

impl ExtensionAssignment {
    /// All-zero parameters: `ρ_i ⊗ |0⟩⟨0|` whenever `purifier_dim >= d`.
    pub fn trivial(e: &Ensemble, ancilla_dim: usize, purifier_dim: usize) -> Self {
        let n = param_count(e.dim(), ancilla_dim, purifier_dim);
        Self {
            ancilla_dim,
            purifier_dim,
            params: vec![vec![0.0; n]; e.len()],
        }
    }

    /// Default purifier dimension `d · ancilla_dim`.
    pub fn default_purifier_dim(system_dim: usize, ancilla_dim: usize) -> usize {
        system_dim * ancilla_dim
    }

    fn flatten(&self) -> Vec<f64> {
        self.params.iter().flatten().copied().collect()
    }

    fn with_flat(&self, flat: &[f64]) -> Self {
        let mut params = self.params.clone();
        let mut offset = 0;
        for p in params.iter_mut() {
            let n = p.len();
            p.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Self { params, ..self.clone() }
    }

    /// Re-expresses the assignment with larger ancilla and purifier spaces,
    /// producing the same extensions up to the inclusion of the smaller spaces.
    pub fn embed(&self, system_dim: usize, ancilla_dim: usize, purifier_dim: usize) -> Result<Self> {
        let (da1, dp1) = (self.ancilla_dim, self.purifier_dim);
        if ancilla_dim < da1 || purifier_dim < dp1 {
            return Err(Error::Validation(format!(
                "cannot embed ancilla/purifier ({da1}, {dp1}) into smaller ({ancilla_dim}, {purifier_dim})"
            )));
        }
        let big1 = da1 * dp1;
        let big2 = ancilla_dim * purifier_dim;
        let r = system_dim.min(big1);
        if r != system_dim.min(big2) {
            return Err(Error::Validation("embedding changes the purification rank slot".into()));
        }
        let map = |j: usize| (j / dp1) * purifier_dim + j % dp1;
        if (0..r).any(|j| map(j) != j) {
            return Err(Error::Validation(format!(
                "reference columns move under embedding (rank slot {r} exceeds purifier dimension {dp1})"
            )));
        }
        let params = self
            .params
            .iter()
            .map(|p| {
                let mut out = vec![0.0; param_count(system_dim, ancilla_dim, purifier_dim)];
                out[..r * r].copy_from_slice(&p[..r * r]);
                for j in r..big1 {
                    let row1 = j - r;
                    let row2 = map(j) - r;
                    for k in 0..r {
                        let src = r * r + 2 * (row1 * r + k);
                        let dst = r * r + 2 * (row2 * r + k);
                        out[dst] = p[src];
                        out[dst + 1] = p[src + 1];
                    }
                }
                out
            })
            .collect();
        Ok(Self {
            ancilla_dim,
            purifier_dim,
            params,
        })
    }
}

/// Fixed per-signal data: `Ψ = V √Λ` restricted to the rank slot.
struct SignalModel {
    d: usize,
    da: usize,
    dp: usize,
    r: usize,
    psi: DMatrix<C64>,
    factor_dims: Vec<usize>,
}

impl SignalModel {
    fn new(rho: &DensityMatrix, ancilla_dim: usize, purifier_dim: usize) -> Result<Self> {
        if ancilla_dim == 0 || purifier_dim == 0 {
            return Err(Error::Validation("ancilla and purifier dimensions must be positive".into()));
        }
        let d = rho.dim();
        let big = ancilla_dim * purifier_dim;
        let eig = rho.eig()?;
        if let Some(k) = (big..d).find(|&k| eig.eigenvalues[k] > SUPPORT_TOL) {
            return Err(Error::Validation(format!(
                "ancilla x purifier capacity {big} is below the rank of the signal (eigenvalue {k} is {:e})",
                eig.eigenvalues[k]
            )));
        }
        let r = d.min(big);
        let v = eig.eigenvectors.as_dmatrix();
        let psi = DMatrix::from_fn(d, r, |s, k| v[(s, k)] * eig.eigenvalues[k].sqrt());
        let mut factor_dims = rho.factor_dims().to_vec();
        factor_dims.push(ancilla_dim);
        Ok(Self {
            d,
            da: ancilla_dim,
            dp: purifier_dim,
            r,
            psi,
            factor_dims,
        })
    }

    fn big(&self) -> usize {
        self.da * self.dp
    }

    fn n_params(&self) -> usize {
        param_count(self.d, self.da, self.dp)
    }

    /// Generator blocks `(A, B)` from real parameters.
    fn blocks(&self, params: &[f64]) -> (DMatrix<C64>, DMatrix<C64>) {
        let r = self.r;
        let mut a = DMatrix::zeros(r, r);
        let mut idx = 0;
        for k in 0..r {
            a[(k, k)] = C64::new(0.0, params[idx]);
            idx += 1;
        }
        for k in 0..r {
            for l in (k + 1)..r {
                let z = C64::new(params[idx], params[idx + 1]);
                a[(k, l)] = z;
                a[(l, k)] = -z.conj();
                idx += 2;
            }
        }
        let rows = self.big() - r;
        let mut b = DMatrix::zeros(rows, r);
        for i in 0..rows {
            for k in 0..r {
                b[(i, k)] = C64::new(params[idx], params[idx + 1]);
                idx += 2;
            }
        }
        (a, b)
    }

    fn small_generator(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
        let r = a.nrows();
        let btb = b.adjoint() * b;
        let mut m = DMatrix::zeros(2 * r, 2 * r);
        m.view_mut((0, 0), (r, r)).copy_from(a);
        m.view_mut((0, r), (r, r)).copy_from(&(-btb));
        for k in 0..r {
            m[(r + k, k)] = C64::new(1.0, 0.0);
        }
        m
    }

    /// Isometry `W = exp(G) E` (`big x r`) and the intermediate `X`, `Y`.
    fn isometry(&self, params: &[f64]) -> Isometry {
        let r = self.r;
        let (a, b) = self.blocks(params);
        let m = Self::small_generator(&a, &b);
        let em = m.exp();
        let x = em.view((0, 0), (r, r)).into_owned();
        let y = em.view((r, 0), (r, r)).into_owned();
        let mut w = DMatrix::zeros(self.big(), r);
        w.view_mut((0, 0), (r, r)).copy_from(&x);
        if self.big() > r {
            w.view_mut((r, 0), (self.big() - r, r)).copy_from(&(&b * &y));
        }
        Isometry { w, y, b, m }
    }

    /// `Φ` with `ρ^ext = Φ Φ†`, rows `(s, a)`, columns purifier index.
    fn factor(&self, w: &DMatrix<C64>) -> DMatrix<C64> {
        let k = &self.psi * w.transpose();
        let (da, dp) = (self.da, self.dp);
        DMatrix::from_fn(self.d * da, dp, |row, p| k[(row / da, (row % da) * dp + p)])
    }

    /// Real-parameter gradient given `Φ̄` (so that `df = Re Tr(Φ̄† dΦ)`).
    fn pullback(&self, iso: &Isometry, phi_bar: &DMatrix<C64>) -> Vec<f64> {
        let (r, da, dp) = (self.r, self.da, self.dp);
        let big = self.big();
        let k_bar = DMatrix::from_fn(self.d, big, |s, j| phi_bar[(s * da + j / dp, j % dp)]);
        let w_bar = k_bar.transpose() * self.psi.map(|z| z.conj());

        let x_bar = w_bar.view((0, 0), (r, r)).into_owned();
        let wb_bot = w_bar.view((r, 0), (big - r, r)).into_owned();
        let y_bar = iso.b.adjoint() * &wb_bot;

        let mut z_bar = DMatrix::zeros(2 * r, 2 * r);
        z_bar.view_mut((0, 0), (r, r)).copy_from(&x_bar);
        z_bar.view_mut((r, 0), (r, r)).copy_from(&y_bar);
        let m_bar = frechet_exp(&iso.m.adjoint(), &z_bar);

        let a_bar = m_bar.view((0, 0), (r, r)).into_owned();
        let m12 = m_bar.view((0, r), (r, r)).into_owned();
        let b_bar = &wb_bot * iso.y.adjoint() - &iso.b * &m12 - &iso.b * m12.adjoint();

        let mut grad = Vec::with_capacity(self.n_params());
        for k in 0..r {
            grad.push(a_bar[(k, k)].im);
        }
        for k in 0..r {
            for l in (k + 1)..r {
                grad.push(a_bar[(k, l)].re - a_bar[(l, k)].re);
                grad.push(a_bar[(k, l)].im + a_bar[(l, k)].im);
            }
        }
        for i in 0..(big - r) {
            for k in 0..r {
                grad.push(b_bar[(i, k)].re);
                grad.push(b_bar[(i, k)].im);
            }
        }
        grad
    }
}

struct Isometry {
    w: DMatrix<C64>,
    y: DMatrix<C64>,
    b: DMatrix<C64>,
    m: DMatrix<C64>,
}

/// Fréchet derivative `L(M, E)` of the matrix exponential, read off the
/// upper-right block of `exp([[M, E], [0, M]])`.
fn frechet_exp(m: &DMatrix<C64>, e: &DMatrix<C64>) -> DMatrix<C64> {
    let n = m.nrows();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(m);
    big.view_mut((n, n), (n, n)).copy_from(m);
    big.view_mut((0, n), (n, n)).copy_from(e);
    big.exp().view((0, n), (n, n)).into_owned()
}

/// Extension of one signal: canonical purification, isometry from `params`,
/// trace over the purifier. Factors are `rho`'s followed by the ancilla.
pub fn extension_from_params(
    rho: &DensityMatrix,
    params: &[f64],
    ancilla_dim: usize,
    purifier_dim: usize,
) -> Result<DensityMatrix> {
    let model = SignalModel::new(rho, ancilla_dim, purifier_dim)?;
    check_len(params.len(), model.n_params())?;
    let phi = model.factor(&model.isometry(params).w);
    let ext = ComplexMatrix::from_dmatrix_unchecked(&phi * phi.adjoint()).hermitian_part();
    Ok(DensityMatrix::from_matrix_unchecked(ext, model.factor_dims))
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{got} parameters supplied, {want} expected")));
    }
    Ok(())
}

/// Extension ensemble `{p_i, ρ_i^ext}`.
pub fn extension_ensemble(e: &Ensemble, a: &ExtensionAssignment) -> Result<Ensemble> {
    if a.params.len() != e.len() {
        return Err(Error::Shape(format!("assignment has {} signals, ensemble {}", a.params.len(), e.len())));
    }
    let states = e
        .states()
        .iter()
        .zip(&a.params)
        .map(|(s, p)| extension_from_params(s, p, a.ancilla_dim, a.purifier_dim))
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(e.probs().to_vec(), states)
}

/// `S(Σ p_i ρ_i^ext)` in bits.
pub fn assignment_entropy(e: &Ensemble, a: &ExtensionAssignment) -> Result<f64> {
    Ok(von_neumann_entropy(&ensemble_density(&extension_ensemble(e, a)?)))
}

/// Objective evaluator over flattened parameters.
struct Objective<'a> {
    probs: &'a [f64],
    models: Vec<SignalModel>,
    template: ExtensionAssignment,
}

struct Evaluation {
    entropy: f64,
    regularized: f64,
    grad: Option<Vec<f64>>,
}

impl<'a> Objective<'a> {
    fn new(e: &'a Ensemble, a: &ExtensionAssignment) -> Result<Self> {
        if a.params.len() != e.len() {
            return Err(Error::Shape(format!("assignment has {} signals, ensemble {}", a.params.len(), e.len())));
        }
        let models = e
            .states()
            .iter()
            .map(|s| SignalModel::new(s, a.ancilla_dim, a.purifier_dim))
            .collect::<Result<Vec<_>>>()?;
        for (m, p) in models.iter().zip(&a.params) {
            check_len(p.len(), m.n_params())?;
        }
        Ok(Self {
            probs: e.probs(),
            models,
            template: a.clone(),
        })
    }

    fn evaluate(&self, flat: &[f64], with_grad: bool) -> Result<Evaluation> {
        let n = self.models[0].d * self.models[0].da;
        let mut rho = DMatrix::<C64>::zeros(n, n);
        let mut parts = Vec::with_capacity(self.models.len());
        let mut offset = 0;
        for (model, &p) in self.models.iter().zip(self.probs) {
            let np = model.n_params();
            let iso = model.isometry(&flat[offset..offset + np]);
            offset += np;
            let phi = model.factor(&iso.w);
            rho += (&phi * phi.adjoint()) * C64::new(p, 0.0);
            parts.push((iso, phi));
        }
        let rho = ComplexMatrix::from_dmatrix_unchecked(rho).hermitian_part();
        let eig = hermitian_eig_unchecked(&rho)?;
        let clamped: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
        let entropy = spectrum_entropy(&clamped);
        let shift = GRADIENT_REGULARIZATION / n as f64;
        let regularized = clamped.iter().map(|l| l + shift).map(|mu| -mu * mu.log2()).sum();

        let grad = if with_grad {
            // Γ = dS/dρ = -(log₂(ρ + εI/n) + I/ln 2)
            let gamma = eig
                .map_eigenvalues(|l| -((l.max(0.0) + shift).log2() + std::f64::consts::LOG2_E))
                .into_dmatrix();
            let mut grad = Vec::with_capacity(flat.len());
            for ((model, &p), (iso, phi)) in self.models.iter().zip(self.probs).zip(&parts) {
                let phi_bar = (&gamma * phi) * C64::new(2.0 * p, 0.0);
                grad.extend(model.pullback(iso, &phi_bar));
            }
            Some(grad)
        } else {
            None
        };
        Ok(Evaluation {
            entropy,
            regularized,
            grad,
        })
    }
}

/// Gradient of the regularised entropy with respect to all parameters,
/// concatenated signal by signal.
pub fn entropy_gradient(e: &Ensemble, a: &ExtensionAssignment) -> Result<Vec<f64>> {
    let obj = Objective::new(e, a)?;
    Ok(obj.evaluate(&a.flatten(), true)?.grad.expect("gradient requested"))
}

/// Entropy of `ρ^ext + ε I / n`, the function differentiated by [`entropy_gradient`].
pub fn regularized_entropy(e: &Ensemble, a: &ExtensionAssignment) -> Result<f64> {
    let obj = Objective::new(e, a)?;
    Ok(obj.evaluate(&a.flatten(), false)?.regularized)
}

/// Outcome of [`verify_extension`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtensionCheck {
    pub ok: bool,
    /// `‖Tr_anc ρ^ext - ρ‖₁`.
    pub residual: f64,
    pub valid_state: bool,
}

/// Checks that `rho_ext` is a valid state whose leading factors reduce to `rho`.
pub fn verify_extension(rho_ext: &DensityMatrix, rho: &DensityMatrix, tol: f64) -> ExtensionCheck {
    let d = rho.dim();
    if !rho_ext.dim().is_multiple_of(d) {
        return ExtensionCheck {
            ok: false,
            residual: f64::INFINITY,
            valid_state: false,
        };
    }
    let valid_state = DensityMatrix::new(rho_ext.matrix().clone(), vec![rho_ext.dim()]).is_ok();
    let residual = partial_trace(rho_ext.matrix(), &[d, rho_ext.dim() / d], &[0])
        .map(|m| (&m - rho.matrix()).trace_norm())
        .unwrap_or(f64::INFINITY);
    ExtensionCheck {
        ok: valid_state && residual <= tol,
        residual,
        valid_state,
    }
}

/// Settings for [`minimize_extension_entropy`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub multistarts: usize,
    pub max_iters: usize,
    pub step_tolerance: f64,
    pub entropy_tolerance: f64,
    pub seed: u64,
    pub ancilla_dim: usize,
    /// Defaults to `block dimension x ancilla_dim`; `Some(1)` restricts to pure extensions.
    pub purifier_dim: Option<usize>,
    /// Signals per block; the minimiser works on the `block_length`-fold product ensemble.
    pub block_length: usize,
    /// Standard deviation of random initial parameters.
    pub init_scale: f64,
    /// Extra starting points, embedded into the configured dimensions if needed.
    #[serde(default)]
    pub warm_starts: Vec<ExtensionAssignment>,
    pub max_dim: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            multistarts: 8,
            max_iters: 500,
            step_tolerance: 1e-10,
            entropy_tolerance: 1e-12,
            seed: 0,
            ancilla_dim: 2,
            purifier_dim: None,
            block_length: 1,
            init_scale: 0.1,
            warm_starts: Vec::new(),
            max_dim: DEFAULT_MAX_DIM,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Gradient,
    Coordinate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub start: usize,
    pub iteration: usize,
    pub entropy: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub kind: StepKind,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StartSummary {
    pub start: usize,
    pub initial_entropy: f64,
    pub final_entropy: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinimizeResult {
    pub best_entropy: f64,
    pub best_assignment: ExtensionAssignment,
    pub best_start: usize,
    pub block_length: usize,
    pub starts: Vec<StartSummary>,
    pub history: Vec<IterationRecord>,
}

struct StartOutcome {
    summary: StartSummary,
    params: Vec<f64>,
    history: Vec<IterationRecord>,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const STALL_PATIENCE: usize = 5;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient descent with a Barzilai-Borwein trial step and Armijo backtracking;
/// falls back to one pass of coordinate search when backtracking fails.
fn descend(obj: &Objective, start: usize, x0: Vec<f64>, cfg: &OptimizerConfig) -> Result<StartOutcome> {
    let mut x = x0;
    let mut cur = obj.evaluate(&x, true)?;
    let initial_entropy = cur.entropy;
    let mut best_entropy = cur.entropy;
    let mut best_x = x.clone();
    let mut history = Vec::new();
    let mut g = cur.grad.take().expect("gradient requested");
    let mut t = 1.0 / norm(&g).max(1.0);
    let mut stalls = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut coord_step = 0.1 * cfg.init_scale.max(1e-3);

    for iteration in 0..cfg.max_iters {
        iterations = iteration + 1;
        let gn = norm(&g);
        if gn < 1e-14 {
            converged = true;
            break;
        }
        let mut accepted = None;
        let mut trial = t;
        for _ in 0..MAX_BACKTRACKS {
            let xn: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - trial * gi).collect();
            let ev = obj.evaluate(&xn, false)?;
            if ev.regularized <= cur.regularized - ARMIJO * trial * gn * gn {
                accepted = Some((xn, ev));
                break;
            }
            trial *= 0.5;
        }
        let (xn, kind) = match accepted {
            Some((xn, _)) => (xn, StepKind::Gradient),
            None => match coordinate_pass(obj, &x, cur.regularized, coord_step)? {
                Some(xn) => (xn, StepKind::Coordinate),
                None => {
                    coord_step *= 0.5;
                    if coord_step < cfg.step_tolerance {
                        converged = true;
                        break;
                    }
                    continue;
                }
            },
        };
        let mut next = obj.evaluate(&xn, true)?;
        let gnext = next.grad.take().expect("gradient requested");
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let step = norm(&s);
        let decrease = cur.regularized - next.regularized;

        // Barzilai-Borwein step for the next trial
        let sy: f64 = s.iter().zip(gnext.iter().zip(&g)).map(|(si, (gn1, g0))| si * (gn1 - g0)).sum();
        t = if sy > 0.0 { (s.iter().map(|v| v * v).sum::<f64>() / sy).min(1e3) } else { trial * 2.0 };

        history.push(IterationRecord {
            start,
            iteration,
            entropy: next.entropy,
            grad_norm: norm(&gnext),
            step,
            kind,
        });
        x = xn;
        g = gnext;
        cur = next;
        if cur.entropy < best_entropy {
            best_entropy = cur.entropy;
            best_x = x.clone();
        }
        if step < cfg.step_tolerance {
            converged = true;
            break;
        }
        if decrease < cfg.entropy_tolerance {
            stalls += 1;
            if stalls >= STALL_PATIENCE {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Ok(StartOutcome {
        summary: StartSummary {
            start,
            initial_entropy,
            final_entropy: best_entropy,
            iterations,
            converged,
        },
        params: best_x,
        history,
    })
}

/// One sweep of ±`delta` moves along each coordinate; returns the improved point, if any.
fn coordinate_pass(obj: &Objective, x: &[f64], f0: f64, delta: f64) -> Result<Option<Vec<f64>>> {
    let mut best = x.to_vec();
    let mut fbest = f0;
    let mut improved = false;
    for j in 0..x.len() {
        for sign in [1.0, -1.0] {
            let mut trial = best.clone();
            trial[j] += sign * delta;
            let f = obj.evaluate(&trial, false)?.regularized;
            if f < fbest {
                fbest = f;
                best = trial;
                improved = true;
                break;
            }
        }
    }
    Ok(improved.then_some(best))
}

/// Sub-seeded generator for multistart `index`.
fn start_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Multistart minimisation of `S(ρ^ext)` over extension assignments of the
/// `block_length`-fold product ensemble of `e`.
///
/// Start 0 is the trivial assignment, starts `1..multistarts` are random and
/// configured warm starts follow. The lowest entropy wins, ties going to the
/// lower start index.
pub fn minimize_extension_entropy(e: &Ensemble, cfg: &OptimizerConfig) -> Result<MinimizeResult> {
    if cfg.multistarts == 0 {
        return Err(Error::Validation("at least one multistart is required".into()));
    }
    if cfg.block_length == 0 || cfg.ancilla_dim == 0 {
        return Err(Error::Validation("block length and ancilla dimension must be positive".into()));
    }
    let block = product_ensemble(e, cfg.block_length, cfg.max_dim)?;
    let cap = ancilla_cap_within(cfg.block_length, e.dim(), cfg.max_dim);
    let ancilla_dim = if cfg.ancilla_dim > cap {
        log::warn!("ancilla dimension {} clamped to {cap}", cfg.ancilla_dim);
        cap
    } else {
        cfg.ancilla_dim
    };
    let purifier_dim = cfg
        .purifier_dim
        .unwrap_or_else(|| ExtensionAssignment::default_purifier_dim(block.dim(), ancilla_dim));
    crate::matstack::check_dim(block.dim() * ancilla_dim, cfg.max_dim)?;

    let template = ExtensionAssignment::trivial(&block, ancilla_dim, purifier_dim);
    let obj = Objective::new(&block, &template)?;
    let n = template.flatten().len();

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(cfg.multistarts + cfg.warm_starts.len());
    starts.push(vec![0.0; n]);
    let normal = Normal::new(0.0, cfg.init_scale.max(0.0)).map_err(|e| Error::Validation(e.to_string()))?;
    for i in 1..cfg.multistarts {
        let mut rng = start_rng(cfg.seed, i);
        starts.push((0..n).map(|_| normal.sample(&mut rng)).collect());
    }
    for warm in &cfg.warm_starts {
        let embedded = if warm.ancilla_dim == ancilla_dim && warm.purifier_dim == purifier_dim {
            warm.clone()
        } else {
            warm.embed(block.dim(), ancilla_dim, purifier_dim)?
        };
        if embedded.params.len() != block.len() {
            return Err(Error::Shape("warm start has the wrong number of signals".into()));
        }
        starts.push(embedded.flatten());
    }

    let outcomes = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, x0)| descend(&obj, i, x0, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if o.summary.final_entropy < outcomes[best].summary.final_entropy {
            best = i;
        }
    }
    let best_assignment = obj.template.with_flat(&outcomes[best].params);
    let best_entropy = assignment_entropy(&block, &best_assignment)?;
    let mut starts = Vec::with_capacity(outcomes.len());
    let mut history = Vec::new();
    for o in outcomes {
        starts.push(o.summary);
        history.extend(o.history);
    }
    Ok(MinimizeResult {
        best_entropy,
        best_assignment,
        best_start: best,
        block_length: cfg.block_length,
        starts,
        history,
    })
}
