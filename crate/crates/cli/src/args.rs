//! Command-line arguments. Every argument struct serialises into the config
//! echo embedded in the output, so field names are part of the output format.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixcomp_core::matstack::DEFAULT_MAX_DIM;
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "mixcomp", version, about = "Visible compression of mixed-state ensembles")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    /// Output file; stdout when absent. A `<out>.meta.json` sidecar with timestamps is written next to it.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Largest Hilbert-space dimension any step may materialise.
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_DIM)]
    pub max_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Entropies, Holevo quantity and support dimensions of an ensemble.
    Analyze(AnalyzeArgs),
    /// Minimise the ensemble entropy over extensions of the signal states.
    Minimize(MinimizeArgs),
    /// Typical-subspace compression of length-n sequences.
    SimulateJs(SimulateJsArgs),
    /// Extension protocol: extend blocks of n signals, compress k blocks jointly.
    SimulateEp(SimulateEpArgs),
    /// One simulation per n (and per k for the extension protocol), one row each.
    Sweep(SweepArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Ensemble JSON file.
    pub ensemble: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MinimizeArgs {
    pub ensemble: PathBuf,
    /// Signals per block.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    /// Write the best assignment as JSON to this path.
    #[arg(long)]
    #[serde(skip)]
    pub save_assignment: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimizerArgs {
    #[arg(long, default_value_t = 2)]
    pub ancilla_dim: usize,
    /// Defaults to block dimension times ancilla dimension.
    #[arg(long, conflicts_with = "pure_extensions")]
    pub purifier_dim: Option<usize>,
    /// Shorthand for `--purifier-dim 1`.
    #[arg(long)]
    pub pure_extensions: bool,
    #[arg(long, default_value_t = 8)]
    pub multistarts: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Standard deviation of random starting parameters.
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl OptimizerArgs {
    pub fn purifier(&self) -> Option<usize> {
        if self.pure_extensions {
            Some(1)
        } else {
            self.purifier_dim
        }
    }
}

/// Exactly one way of choosing the typical subspace.
#[derive(Debug, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct TargetArgs {
    /// Smallest subspace with retained mass at least 1 - eps.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Fixed number of retained strings.
    #[arg(long)]
    pub dim_cap: Option<usize>,
    /// Dimension cap floor(2^(rate n)) for a budget in qubits per compressed site.
    #[arg(long)]
    pub rate_budget: Option<f64>,
    /// Keep all strings with at most this many sites off the dominant eigenvalue.
    #[arg(long)]
    pub max_minority: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Exact up to 4096 sequences, Monte Carlo beyond.
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Args, Serialize)]
pub struct SamplingArgs {
    #[arg(long, value_enum, default_value_t = SamplingMode::Auto)]
    pub sampling: SamplingMode,
    /// Monte Carlo draws.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateJsArgs {
    pub ensemble: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub target: TargetArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Where the extension assignment comes from; the minimiser runs when neither flag is set.
#[derive(Debug, Args, Serialize)]
pub struct AssignmentArgs {
    /// Assignment JSON written by `minimize --save-assignment`.
    #[arg(long, conflicts_with = "trivial_assignment")]
    pub assignment: Option<PathBuf>,
    /// Extensions rho ⊗ |0⟩⟨0|, which reduce the protocol to plain typical-subspace coding.
    #[arg(long)]
    pub trivial_assignment: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateEpArgs {
    pub ensemble: PathBuf,
    /// Signals per extended block.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Blocks compressed jointly.
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub target: TargetArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub assignment: AssignmentArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Js,
    Ep,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    pub ensemble: PathBuf,
    #[arg(long, value_enum, default_value_t = Protocol::Js)]
    pub protocol: Protocol,
    /// Block lengths: `4,8,12`, `2..5` or `2..=10`.
    #[arg(long, value_parser = parse_list)]
    pub n: UsizeList,
    /// Block counts for the extension protocol, same syntax as `--n`.
    #[arg(long, value_parser = parse_list, default_value = "1")]
    pub k: UsizeList,
    #[command(flatten)]
    pub target: TargetArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub assignment: AssignmentArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct UsizeList(pub Vec<usize>);

/// Parses `a,b,c`, `a..b` (exclusive) and `a..=b`, or comma-separated mixtures of them.
pub fn parse_list(s: &str) -> Result<UsizeList, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}"));
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        if let Some((a, b)) = part.split_once("..=") {
            out.extend(num(a)?..=num(b)?);
        } else if let Some((a, b)) = part.split_once("..") {
            out.extend(num(a)?..num(b)?);
        } else {
            out.push(num(part)?);
        }
    }
    if out.is_empty() {
        return Err(format!("'{s}' contains no values"));
    }
    Ok(UsizeList(out))
}
