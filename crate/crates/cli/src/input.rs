//! Ensemble and assignment files.
//!
//! An ensemble file is a JSON object
//!
//! ```json
//! { "probs": [0.5, 0.5],
//!   "states": [ [[[1,0],[0,0]], [[0,0],[0,0]]], ... ],
//!   "factor_dims": [2] }
//! ```
//!
//! Each state is a list of rows, each entry a `[re, im]` pair. `factor_dims`
//! is optional and defaults to a single factor.

use std::path::Path;

use mixcomp_core::extopt::ExtensionAssignment;
use mixcomp_core::matstack::{ComplexMatrix, C64};
use mixcomp_core::states::{DensityMatrix, Ensemble};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Largest deviation of the probability sum from 1 that is silently renormalised.
pub const PROB_RENORMALIZE_TOL: f64 = 1e-9;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleFile {
    pub probs: Vec<f64>,
    pub states: Vec<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    pub factor_dims: Option<Vec<usize>>,
}

pub fn load_ensemble(path: &Path) -> CliResult<Ensemble> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read ensemble file {}: {e}", path.display())))?;
    parse_ensemble(&text).map_err(|e| match e {
        CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
        CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_ensemble(text: &str) -> CliResult<Ensemble> {
    let file: EnsembleFile = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    ensemble_from_file(file)
}

pub fn ensemble_from_file(file: EnsembleFile) -> CliResult<Ensemble> {
    if file.probs.len() != file.states.len() {
        return Err(CliError::Validation(format!(
            "{} probabilities for {} states",
            file.probs.len(),
            file.states.len()
        )));
    }
    if file.states.is_empty() {
        return Err(CliError::Validation("ensemble has no states".into()));
    }
    if let Some(i) = file.probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Err(CliError::Validation(format!("probability {i} is negative or not finite")));
    }
    let sum: f64 = file.probs.iter().sum();
    if (sum - 1.0).abs() > PROB_RENORMALIZE_TOL {
        return Err(CliError::Validation(format!(
            "probability sum {sum} differs from 1 by more than {PROB_RENORMALIZE_TOL:e}"
        )));
    }
    let probs: Vec<f64> = file.probs.iter().map(|p| p / sum).collect();

    let mut states = Vec::with_capacity(file.states.len());
    for (i, rows) in file.states.iter().enumerate() {
        let d = rows.len();
        if let Some(r) = rows.iter().position(|row| row.len() != d) {
            return Err(CliError::Validation(format!(
                "state {i}: row {r} has {} entries, expected {d}",
                rows[r].len()
            )));
        }
        let entries: Vec<C64> = rows.iter().flatten().map(|&[re, im]| C64::new(re, im)).collect();
        let m = ComplexMatrix::from_row_major(d, d, entries).map_err(|e| CliError::Validation(format!("state {i}: {e}")))?;
        let dims = file.factor_dims.clone().unwrap_or_else(|| vec![d]);
        let state = DensityMatrix::new(m, dims).map_err(|e| CliError::Validation(format!("state {i}: {e}")))?;
        states.push(state);
    }
    Ensemble::new(probs, states).map_err(|e| CliError::Validation(e.to_string()))
}

/// Inverse of [`parse_ensemble`], used to write reference files.
pub fn ensemble_to_file(e: &Ensemble) -> EnsembleFile {
    EnsembleFile {
        probs: e.probs().to_vec(),
        states: e
            .states()
            .iter()
            .map(|s| {
                let m = s.matrix();
                (0..m.rows())
                    .map(|r| (0..m.cols()).map(|c| [m.get(r, c).re, m.get(r, c).im]).collect())
                    .collect()
            })
            .collect(),
        factor_dims: Some(e.factor_dims().to_vec()),
    }
}

pub fn load_assignment(path: &Path) -> CliResult<ExtensionAssignment> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read assignment file {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUBIT_PAIR: &str = r#"{
        "probs": [0.5, 0.5],
        "states": [
            [[[1,0],[0,0]], [[0,0],[0,0]]],
            [[[0.5,0],[0.5,0]], [[0.5,0],[0.5,0]]]
        ],
        "factor_dims": [2]
    }"#;

    #[test]
    fn well_formed_pair() {
        let e = parse_ensemble(QUBIT_PAIR).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.dim(), 2);
    }

    #[test]
    fn bad_probability_sum() {
        let text = QUBIT_PAIR.replace("[0.5, 0.5]", "[0.5, 0.4]");
        let err = parse_ensemble(&text).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
        assert!(err.to_string().contains("probability sum"));
    }

    #[test]
    fn tiny_deviation_is_renormalised() {
        let text = QUBIT_PAIR.replace("[0.5, 0.5]", "[0.5, 0.5000000005]");
        let e = parse_ensemble(&text).unwrap();
        assert!((e.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_hermitian_state_is_named() {
        let text = QUBIT_PAIR.replace("[[[0.5,0],[0.5,0]], [[0.5,0],[0.5,0]]]", "[[[0.5,0],[0.5,0]], [[0.2,0],[0.5,0]]]");
        let err = parse_ensemble(&text).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
        assert!(err.to_string().contains("state 1"), "{err}");
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_ensemble("{\"probs\": [1.0,\n \"states\": }").unwrap_err();
        assert!(matches!(err, CliError::Parse(_)));
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn round_trip() {
        let e = parse_ensemble(QUBIT_PAIR).unwrap();
        let text = serde_json::to_string(&ensemble_to_file(&e)).unwrap();
        let back = parse_ensemble(&text).unwrap();
        assert_eq!(back.probs(), e.probs());
    }
}
