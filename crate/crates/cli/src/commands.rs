use mixcomp_core::bounds::{envelope_check, BoundReport};
use mixcomp_core::extopt::{minimize_extension_entropy, ExtensionAssignment, MinimizeResult, OptimizerConfig};
use mixcomp_core::protocol::{extension_protocol, js_protocol, ProtocolResult, Sampling, SubspaceTarget};
use mixcomp_core::states::{ensemble_density, holevo_quantity, product_ensemble, summarize, von_neumann_entropy};
use mixcomp_core::Ensemble;
use serde_json::{json, Value};

use crate::args::{
    AnalyzeArgs, AssignmentArgs, Cli, Command, MinimizeArgs, OptimizerArgs, Protocol, SamplingArgs, SamplingMode,
    SimulateEpArgs, SimulateJsArgs, SweepArgs, TargetArgs,
};
use crate::error::{CliError, CliResult};
use crate::format::{Cell, Report};
use crate::input::{load_assignment, load_ensemble};

/// Header shared by all key/value style tables.
pub const QUANTITY_HEADER: [&str; 3] = ["quantity", "index", "value"];

/// Header of protocol rows; `k` is empty for typical-subspace runs and
/// `stderr` is empty for exact enumeration.
pub const PROTOCOL_HEADER: [&str; 10] = [
    "protocol",
    "n",
    "k",
    "channel_dim",
    "rate",
    "retained_mass",
    "avg_fidelity",
    "stderr",
    "extension_fidelity",
    "seed",
];

pub fn run(cli: &Cli) -> CliResult<Report> {
    let config = serde_json::to_value(cli).expect("arguments serialise");
    let max_dim = cli.global.max_dim;
    let mut report = match &cli.command {
        Command::Analyze(a) => analyze(a)?,
        Command::Minimize(a) => minimize(a, max_dim)?,
        Command::SimulateJs(a) => simulate_js(a, max_dim)?,
        Command::SimulateEp(a) => simulate_ep(a, max_dim)?,
        Command::Sweep(a) => sweep(a, max_dim)?,
    };
    report.config = config;
    Ok(report)
}

fn empty_report(command: &str, seed: u64, header: &[&'static str]) -> Report {
    Report {
        command: command.into(),
        config: Value::Null,
        seed,
        bounds: Vec::new(),
        header: header.to_vec(),
        rows: Vec::new(),
        attachments: Vec::new(),
        result: Value::Null,
    }
}

fn quantity(name: &str, index: Option<usize>, value: impl Into<Cell>) -> Vec<Cell> {
    vec![name.into(), index.into(), value.into()]
}

fn analyze(a: &AnalyzeArgs) -> CliResult<Report> {
    let e = load_ensemble(&a.ensemble)?;
    let s = summarize(&e);
    let mut r = empty_report("analyze", 0, &QUANTITY_HEADER);
    r.rows.push(quantity("dim", None, e.dim()));
    r.rows.push(quantity("states", None, e.len()));
    r.rows.push(quantity("entropy", None, s.entropy));
    r.rows.push(quantity("holevo", None, s.holevo));
    r.rows.push(quantity("support_dim", None, s.support_dim));
    for (i, p) in e.probs().iter().enumerate() {
        r.rows.push(quantity("probability", Some(i), *p));
    }
    for (i, h) in s.state_entropies.iter().enumerate() {
        r.rows.push(quantity("state_entropy", Some(i), *h));
    }
    for (i, d) in s.state_support_dims.iter().enumerate() {
        r.rows.push(quantity("state_support_dim", Some(i), *d));
    }
    r.result = serde_json::to_value(&s).expect("summary serialises");
    Ok(r)
}

fn optimizer_config(o: &OptimizerArgs, n: usize, max_dim: usize) -> CliResult<OptimizerConfig> {
    if !o.init_scale.is_finite() || o.init_scale < 0.0 {
        return Err(CliError::Validation(format!("init scale must be finite and non-negative, got {}", o.init_scale)));
    }
    if o.purifier() == Some(0) {
        return Err(CliError::Validation("purifier dimension must be positive".into()));
    }
    Ok(OptimizerConfig {
        multistarts: o.multistarts,
        max_iters: o.max_iters,
        seed: o.seed,
        ancilla_dim: o.ancilla_dim,
        purifier_dim: o.purifier(),
        block_length: n,
        init_scale: o.init_scale,
        max_dim,
        ..OptimizerConfig::default()
    })
}

/// Runs the minimiser on blocks of `n` signals and checks the envelope on the block ensemble.
fn run_minimizer(e: &Ensemble, n: usize, o: &OptimizerArgs, max_dim: usize) -> CliResult<(MinimizeResult, Vec<BoundReport>)> {
    let cfg = optimizer_config(o, n, max_dim)?;
    let res = minimize_extension_entropy(e, &cfg)?;
    let block = product_ensemble(e, n, max_dim)?;
    let env = envelope_check(&block, res.best_entropy);
    Ok((res, vec![env.lower, env.upper]))
}

fn minimize(a: &MinimizeArgs, max_dim: usize) -> CliResult<Report> {
    let e = load_ensemble(&a.ensemble)?;
    let (res, bounds) = run_minimizer(&e, a.n, &a.optimizer, max_dim)?;
    let block = product_ensemble(&e, a.n, max_dim)?;
    let holevo = holevo_quantity(&block);
    let entropy = von_neumann_entropy(&ensemble_density(&block));

    let mut r = empty_report("minimize", a.optimizer.seed, &QUANTITY_HEADER);
    r.bounds = bounds;
    r.rows.push(quantity("best_entropy", None, res.best_entropy));
    r.rows.push(quantity("best_entropy_per_signal", None, res.best_entropy / a.n as f64));
    r.rows.push(quantity("holevo", None, holevo));
    r.rows.push(quantity("entropy", None, entropy));
    r.rows.push(quantity("block_length", None, res.block_length));
    r.rows.push(quantity("ancilla_dim", None, res.best_assignment.ancilla_dim));
    r.rows.push(quantity("purifier_dim", None, res.best_assignment.purifier_dim));
    r.rows.push(quantity("best_start", None, res.best_start));
    for s in &res.starts {
        r.rows.push(quantity("start_initial_entropy", Some(s.start), s.initial_entropy));
        r.rows.push(quantity("start_final_entropy", Some(s.start), s.final_entropy));
        r.rows.push(quantity("start_iterations", Some(s.start), s.iterations));
        r.rows.push(quantity("start_converged", Some(s.start), usize::from(s.converged)));
    }
    let assignment = serde_json::to_value(&res.best_assignment).expect("assignment serialises");
    r.attachments.push(("assignment".into(), assignment.clone()));
    r.result = json!({
        "best_entropy": res.best_entropy,
        "best_entropy_per_signal": res.best_entropy / a.n as f64,
        "holevo": holevo,
        "entropy": entropy,
        "block_length": res.block_length,
        "best_start": res.best_start,
        "starts": res.starts,
        "iterations": res.history.len(),
        "assignment": assignment,
    });
    if let Some(path) = &a.save_assignment {
        let text = serde_json::to_string_pretty(&res.best_assignment).expect("assignment serialises");
        std::fs::write(path, text + "\n")?;
    }
    Ok(r)
}

/// Number of length-`sites` strings over `d` symbols with at most `t` symbols
/// different from a fixed one: `Σ_{j ≤ t} C(sites, j) (d - 1)^j`, saturating.
pub fn minority_cap(sites: usize, d: usize, t: usize) -> usize {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    let mut power: u128 = 1;
    for j in 0..=t.min(sites) {
        if j > 0 {
            let Some(next) = binom.checked_mul((sites - j + 1) as u128) else {
                return usize::MAX;
            };
            binom = next / j as u128;
            power = power.saturating_mul(d.saturating_sub(1) as u128);
        }
        total = total.saturating_add(binom.saturating_mul(power));
    }
    usize::try_from(total).unwrap_or(usize::MAX)
}

fn resolve_target(t: &TargetArgs, sites: usize, site_dim: usize) -> CliResult<SubspaceTarget> {
    match (t.eps, t.dim_cap, t.rate_budget, t.max_minority) {
        (Some(eps), None, None, None) => Ok(SubspaceTarget::Mass(eps)),
        (None, Some(m), None, None) => Ok(SubspaceTarget::DimCap(m)),
        (None, None, Some(rate), None) => {
            if !rate.is_finite() || rate <= 0.0 {
                return Err(CliError::Validation(format!("rate budget must be positive, got {rate}")));
            }
            Ok(SubspaceTarget::from_rate(rate, sites))
        }
        (None, None, None, Some(minority)) => Ok(SubspaceTarget::DimCap(minority_cap(sites, site_dim, minority))),
        _ => Err(CliError::Usage(
            "exactly one of --eps, --dim-cap, --rate-budget, --max-minority is required".into(),
        )),
    }
}

fn sampling(s: &SamplingArgs, seed: u64) -> CliResult<Sampling> {
    if s.samples == 0 && s.sampling != SamplingMode::Exact {
        return Err(CliError::Validation("sample count must be positive".into()));
    }
    Ok(match s.sampling {
        SamplingMode::Auto => Sampling::Auto { samples: s.samples, seed },
        SamplingMode::Exact => Sampling::Exact,
        SamplingMode::MonteCarlo => Sampling::MonteCarlo { samples: s.samples, seed },
    })
}

fn protocol_row(name: &str, n: usize, k: Option<usize>, p: &ProtocolResult, seed: u64) -> Vec<Cell> {
    vec![
        name.into(),
        n.into(),
        k.into(),
        p.channel_dim.into(),
        p.rate.into(),
        p.retained_mass.into(),
        p.avg_fidelity.into(),
        p.std_error.into(),
        p.extension_fidelity.into(),
        seed.into(),
    ]
}

/// Protocol result without the per-sequence records.
fn protocol_value(p: &ProtocolResult) -> Value {
    let mut v = serde_json::to_value(p).expect("protocol result serialises");
    if let Value::Object(map) = &mut v {
        map.remove("per_sequence");
    }
    v
}

fn tag_bounds(bounds: &[BoundReport], tag: &str) -> Vec<BoundReport> {
    bounds
        .iter()
        .map(|b| BoundReport {
            name: format!("{}[{tag}]", b.name),
            ..b.clone()
        })
        .collect()
}

fn simulate_js(a: &SimulateJsArgs, max_dim: usize) -> CliResult<Report> {
    let e = load_ensemble(&a.ensemble)?;
    let target = resolve_target(&a.target, a.n, e.dim())?;
    let p = js_protocol(&e, a.n, target, sampling(&a.sampling, a.seed)?, max_dim)?;
    let mut r = empty_report("simulate-js", a.seed, &PROTOCOL_HEADER);
    r.bounds = p.bounds.clone();
    r.rows.push(protocol_row("js", a.n, None, &p, a.seed));
    r.result = protocol_value(&p);
    Ok(r)
}

struct ResolvedAssignment {
    assignment: ExtensionAssignment,
    source: &'static str,
    minimized: Option<MinimizeResult>,
    bounds: Vec<BoundReport>,
}

fn resolve_assignment(
    e: &Ensemble,
    n: usize,
    a: &AssignmentArgs,
    o: &OptimizerArgs,
    max_dim: usize,
) -> CliResult<ResolvedAssignment> {
    if let Some(path) = &a.assignment {
        return Ok(ResolvedAssignment {
            assignment: load_assignment(path)?,
            source: "file",
            minimized: None,
            bounds: Vec::new(),
        });
    }
    if a.trivial_assignment {
        let block = product_ensemble(e, n, max_dim)?;
        let purifier = o
            .purifier()
            .unwrap_or_else(|| ExtensionAssignment::default_purifier_dim(block.dim(), o.ancilla_dim));
        return Ok(ResolvedAssignment {
            assignment: ExtensionAssignment::trivial(&block, o.ancilla_dim, purifier),
            source: "trivial",
            minimized: None,
            bounds: Vec::new(),
        });
    }
    let (res, bounds) = run_minimizer(e, n, o, max_dim)?;
    Ok(ResolvedAssignment {
        assignment: res.best_assignment.clone(),
        source: "minimized",
        minimized: Some(res),
        bounds,
    })
}

fn assignment_value(ra: &ResolvedAssignment) -> Value {
    json!({
        "source": ra.source,
        "best_entropy": ra.minimized.as_ref().map(|m| m.best_entropy),
        "assignment": ra.assignment,
    })
}

fn simulate_ep(a: &SimulateEpArgs, max_dim: usize) -> CliResult<Report> {
    let e = load_ensemble(&a.ensemble)?;
    let seed = a.optimizer.seed;
    let ra = resolve_assignment(&e, a.n, &a.assignment, &a.optimizer, max_dim)?;
    let site_dim = e.dim().pow(a.n as u32) * ra.assignment.ancilla_dim;
    let target = resolve_target(&a.target, a.k, site_dim)?;
    let p = extension_protocol(&e, a.n, &ra.assignment, a.k, target, sampling(&a.sampling, seed)?, max_dim)?;

    let mut r = empty_report("simulate-ep", seed, &PROTOCOL_HEADER);
    r.bounds = ra.bounds.clone();
    r.bounds.extend(p.bounds.iter().cloned());
    r.rows.push(protocol_row("ep", a.n, Some(a.k), &p, seed));
    let assignment = assignment_value(&ra);
    r.attachments.push(("assignment".into(), assignment.clone()));
    r.result = json!({ "assignment": assignment, "protocol": protocol_value(&p) });
    Ok(r)
}

fn sweep(a: &SweepArgs, max_dim: usize) -> CliResult<Report> {
    let e = load_ensemble(&a.ensemble)?;
    let seed = a.optimizer.seed;
    let samp = sampling(&a.sampling, seed)?;
    let mut r = empty_report("sweep", seed, &PROTOCOL_HEADER);
    let mut results = Vec::new();
    for &n in &a.n.0 {
        match a.protocol {
            Protocol::Js => {
                let target = resolve_target(&a.target, n, e.dim())?;
                let p = js_protocol(&e, n, target, samp, max_dim)?;
                r.bounds.extend(tag_bounds(&p.bounds, &format!("n={n}")));
                r.rows.push(protocol_row("js", n, None, &p, seed));
                results.push(json!({ "n": n, "protocol": protocol_value(&p) }));
            }
            Protocol::Ep => {
                let ra = resolve_assignment(&e, n, &a.assignment, &a.optimizer, max_dim)?;
                r.bounds.extend(tag_bounds(&ra.bounds, &format!("n={n}")));
                let site_dim = e.dim().pow(n as u32) * ra.assignment.ancilla_dim;
                for &k in &a.k.0 {
                    let target = resolve_target(&a.target, k, site_dim)?;
                    let p = extension_protocol(&e, n, &ra.assignment, k, target, samp, max_dim)?;
                    r.bounds.extend(tag_bounds(&p.bounds, &format!("n={n},k={k}")));
                    r.rows.push(protocol_row("ep", n, Some(k), &p, seed));
                    results.push(json!({ "n": n, "k": k, "protocol": protocol_value(&p) }));
                }
                results.push(json!({ "n": n, "assignment": assignment_value(&ra) }));
            }
        }
    }
    r.result = Value::Array(results);
    Ok(r)
}
