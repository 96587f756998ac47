//! Empirical checks of the inequalities that constrain compression rates.

use serde::Serialize;

use crate::error::Result;
use crate::fidelity::fidelity;
use crate::matstack::DEFAULT_MAX_DIM;
use crate::states::{ensemble_density, holevo_quantity, von_neumann_entropy, DensityMatrix, Ensemble};

/// Slack allowed when deciding `lhs <= rhs`.
pub const BOUND_SLACK: f64 = 1e-9;

/// Minimum average fidelity for a measured rate to be compared with the Holevo quantity.
pub const HOLEVO_FIDELITY_THRESHOLD: f64 = 0.99;

/// The continuity inequality for entropy holds once `F > 1 - 1/36`.
pub const CONTINUITY_FIDELITY_THRESHOLD: f64 = 1.0 - 1.0 / 36.0;

/// Tolerance on both sides of the extension-entropy envelope.
pub const ENVELOPE_TOL: f64 = 1e-6;

/// Outcome of checking `lhs <= rhs`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs <= rhs + BOUND_SLACK`.
    pub satisfied: bool,
    /// `rhs - lhs`.
    pub slack: f64,
    /// False when the precondition of the inequality does not hold.
    pub applicable: bool,
    /// Precondition threshold recorded alongside the check, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl BoundReport {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            satisfied: lhs <= rhs + BOUND_SLACK,
            slack: rhs - lhs,
            applicable: true,
            threshold: None,
        }
    }

    fn not_applicable(mut self) -> Self {
        self.applicable = false;
        self
    }

    fn with_threshold(mut self, t: f64) -> Self {
        self.threshold = Some(t);
        self
    }

    /// Satisfied, or not applicable.
    pub fn passed(&self) -> bool {
        !self.applicable || self.satisfied
    }

    pub fn status(&self) -> &'static str {
        match (self.applicable, self.satisfied) {
            (false, _) => "not-applicable",
            (true, true) => "satisfied",
            (true, false) => "violated",
        }
    }
}

/// `I_LH(e) <= measured_rate`, applicable when `avg_fidelity >= 0.99`.
pub fn holevo_bound_check(e: &Ensemble, measured_rate: f64, avg_fidelity: f64) -> BoundReport {
    let report = BoundReport::new("holevo-rate", holevo_quantity(e), measured_rate)
        .with_threshold(HOLEVO_FIDELITY_THRESHOLD);
    if avg_fidelity >= HOLEVO_FIDELITY_THRESHOLD {
        report
    } else {
        report.not_applicable()
    }
}

/// `|S(ρ) - S(ρ')| <= 2 log₂(dim) √(1 - F) + 1`, applicable when `F > 35/36`.
pub fn entropy_continuity_check(rho: &DensityMatrix, rho_prime: &DensityMatrix) -> Result<BoundReport> {
    let f = fidelity(rho, rho_prime)?;
    let lhs = (von_neumann_entropy(rho) - von_neumann_entropy(rho_prime)).abs();
    let rhs = 2.0 * (rho.dim() as f64).log2() * (1.0 - f).max(0.0).sqrt() + 1.0;
    let report = BoundReport::new("entropy-continuity", lhs, rhs).with_threshold(CONTINUITY_FIDELITY_THRESHOLD);
    Ok(if f > CONTINUITY_FIDELITY_THRESHOLD {
        report
    } else {
        report.not_applicable()
    })
}

/// Ancilla dimension sufficient for blocks of `n` signals: `dim_q^(2n)`,
/// capped at the default dimension guard.
pub fn ancilla_cap(n: usize, dim_q: usize) -> usize {
    ancilla_cap_within(n, dim_q, DEFAULT_MAX_DIM)
}

pub fn ancilla_cap_within(n: usize, dim_q: usize, max_dim: usize) -> usize {
    match crate::states::checked_pow(dim_q, 2 * n) {
        Some(cap) if cap <= max_dim => cap,
        _ => {
            log::warn!("ancilla cap {dim_q}^{} exceeds the dimension guard; using {max_dim}", 2 * n);
            max_dim
        }
    }
}

/// Both sides of `I_LH(e) - tol <= best_entropy <= S(ρ) + tol`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Envelope {
    pub lower: BoundReport,
    pub upper: BoundReport,
}

impl Envelope {
    pub fn satisfied(&self) -> bool {
        self.lower.passed() && self.upper.passed()
    }

    pub fn reports(&self) -> [&BoundReport; 2] {
        [&self.lower, &self.upper]
    }
}

pub fn envelope_check(e: &Ensemble, best_entropy: f64) -> Envelope {
    let holevo = holevo_quantity(e);
    let entropy = von_neumann_entropy(&ensemble_density(e));
    Envelope {
        lower: BoundReport::new("envelope-lower", holevo - ENVELOPE_TOL, best_entropy),
        upper: BoundReport::new("envelope-upper", best_entropy, entropy + ENVELOPE_TOL),
    }
}
