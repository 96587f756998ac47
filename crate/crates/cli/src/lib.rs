//! Batch front-end for the `mixcomp` tool: ensemble files, experiment
//! commands and CSV/JSON reports.

pub mod args;
pub mod commands;
pub mod error;
pub mod format;
pub mod input;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::Parser;

pub use args::{Cli, Format};
pub use format::Report;
pub use error::{CliError, CliResult};

/// Runs a parsed command and writes its report to `--out` or `stdout`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let started = SystemTime::now();
    let report = commands::run(cli)?;
    emit(&report, cli.global.format, cli.global.out.as_deref(), started, stdout)
}

/// Writes a report, then fails with [`CliError::BoundViolation`] if any
/// bound report is violated, so a failing run still leaves its output behind.
pub fn emit(
    report: &Report,
    format: Format,
    out: Option<&Path>,
    started: SystemTime,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    let text = report.render(format)?;
    match out {
        Some(path) => {
            std::fs::write(path, &text)?;
            write_sidecar(path, started)?;
        }
        None => stdout.write_all(text.as_bytes())?,
    }
    let violated = report.violations();
    if violated.is_empty() {
        Ok(())
    } else {
        let names: Vec<String> = violated
            .iter()
            .map(|b| format!("{} ({} > {})", b.name, b.lhs, b.rhs))
            .collect();
        Err(CliError::BoundViolation(names.join(", ")))
    }
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn write_sidecar(out: &Path, started: SystemTime) -> CliResult<()> {
    let finished = SystemTime::now();
    let unix = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let meta = serde_json::json!({
        "tool": format::TOOL,
        "version": format::VERSION,
        "output": out.display().to_string(),
        "started_unix": unix(started),
        "finished_unix": unix(finished),
        "elapsed_seconds": finished.duration_since(started).map(|d| d.as_secs_f64()).unwrap_or(0.0),
    });
    let text = serde_json::to_string_pretty(&meta).expect("metadata serialises");
    std::fs::write(sidecar_path(out), text + "\n")?;
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let quiet = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let rendered = e.render().to_string();
            if quiet {
                let _ = stdout.write_all(rendered.as_bytes());
                return 0;
            }
            let _ = stderr.write_all(rendered.as_bytes());
            return 1;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
