//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use angio_core::harness::{describe, CATALOGUE};

use crate::runner::{self, RunOptions};
use crate::scenario::{self, Scenario};
use crate::{exit, shipped, Error};

#[derive(Debug, Parser)]
#[command(
    name = "angio",
    version,
    about = "Picard solver and bound checker for the angiogenesis diffusion system"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run scenarios (file paths or shipped names) and write their artifacts.
    Run {
        #[arg(required = true)]
        configs: Vec<String>,
        /// Root directory; each scenario writes to DIR/<name>.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Scenarios run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Tolerance applied to every check.
        #[arg(long, value_name = "X")]
        tol: Option<f64>,
        /// Replace a configuration value, e.g. `schedule.dt=5e-4`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Parse and validate scenarios without solving.
    Check {
        #[arg(required = true)]
        configs: Vec<String>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List every check with its scope, default tolerance and anchor.
    ListChecks,
    /// List the shipped scenarios.
    ListScenarios,
    /// Describe a shipped scenario or a check.
    Describe { name: String },
}

fn load(config: &str, overrides: &[String]) -> Result<Scenario, Error> {
    let path = Path::new(config);
    if path.exists() {
        return scenario::load(path, overrides);
    }
    match shipped::find(config) {
        Some(text) => {
            scenario::parse_with_overrides(text, overrides).map_err(|e| Error::Config(format!("{config}: {e}")))
        }
        None => Err(Error::Config(format!(
            "`{config}` is neither a file nor a shipped scenario"
        ))),
    }
}

struct Line {
    code: u8,
    out: String,
    err: String,
}

fn run_one(config: &str, opts: &RunOptions, overrides: &[String]) -> Line {
    let prepared = load(config, overrides).and_then(Scenario::prepare);
    let prep = match prepared {
        Ok(p) => p,
        Err(e) => {
            return Line {
                code: e.exit_code(),
                out: String::new(),
                err: format!("error: {e}\n"),
            }
        }
    };
    let mut err: String = prep
        .warnings
        .iter()
        .map(|w| format!("warning: {}: {w}\n", prep.scenario.name))
        .collect();
    match runner::run(&prep, opts) {
        Ok(o) => {
            let r = &o.report;
            let mut out = format!(
                "{}: {} (exit {}), {} Picard iterations, artifacts in {}\n",
                r.scenario,
                r.status,
                o.exit_code,
                r.diagnostics.total_iterations,
                o.out_dir.display()
            );
            for name in &r.failed_checks {
                out.push_str(&format!("{}: check failed: {name}\n", r.scenario));
            }
            Line {
                code: o.exit_code,
                out,
                err,
            }
        }
        Err(e) => {
            if e.exit_code() == exit::CHECK_FAILED {
                err.push_str(&format!(
                    "error: {}: check failed: positivity ({e})\n",
                    prep.scenario.name
                ));
            } else {
                err.push_str(&format!("error: {}: {e}\n", prep.scenario.name));
            }
            Line {
                code: e.exit_code(),
                out: String::new(),
                err,
            }
        }
    }
}

fn list_checks(out: &mut dyn Write) -> std::io::Result<()> {
    for c in CATALOGUE {
        writeln!(
            out,
            "{:<22} {:<14} tol {:<8.0e} {}",
            c.name,
            c.scope.as_str(),
            c.default_tolerance,
            c.anchor
        )?;
    }
    Ok(())
}

fn describe_name(name: &str, out: &mut dyn Write) -> Result<(), Error> {
    if let Some(text) = shipped::find(name) {
        let prep = scenario::parse(text)?.prepare()?;
        let s = &prep.scenario;
        let g = &prep.grid;
        writeln!(out, "{}: {}", s.name, s.description)?;
        writeln!(out, "driver    {}", s.driver.as_str())?;
        writeln!(
            out,
            "grid      {}+{}  n_x={} n_v={}  L_x={} L_v={}",
            g.dim_x, g.dim_v, g.n_x, g.n_v, g.half_width_x, g.half_width_v
        )?;
        writeln!(
            out,
            "schedule  t_end={} dt={} save_stride={}",
            prep.schedule.t_end, prep.schedule.dt, prep.schedule.save_stride
        )?;
        writeln!(out, "checks")?;
        for c in &prep.checks {
            let info = describe(c).expect("resolved checks exist");
            writeln!(out, "  {:<22} {}", info.name, info.anchor)?;
        }
        return Ok(());
    }
    if let Some(c) = describe(name) {
        writeln!(out, "{}", c.name)?;
        writeln!(out, "scope      {}", c.scope.as_str())?;
        writeln!(out, "tolerance  {:e}", c.default_tolerance)?;
        writeln!(out, "anchor     {}", c.anchor)?;
        return Ok(());
    }
    Err(Error::Config(format!("unknown scenario or check `{name}`")))
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn main_with(
    args: impl IntoIterator<Item = impl Into<OsString> + Clone>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    let result: Result<u8, Error> = (|| match cli.command {
        Command::Run {
            configs,
            out: out_root,
            jobs,
            tol,
            overrides,
        } => {
            if let Some(t) = tol {
                if !(t.is_finite() && t >= 0.0) {
                    return Err(Error::Config(format!("--tol must be >= 0, got {t}")));
                }
            }
            let opts = RunOptions { out_root, tol };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
            let lines: Vec<Line> = pool.install(|| configs.par_iter().map(|c| run_one(c, &opts, &overrides)).collect());
            let mut code = exit::OK;
            for l in lines {
                out.write_all(l.out.as_bytes())?;
                err.write_all(l.err.as_bytes())?;
                code = code.max(l.code);
            }
            Ok(code)
        }
        Command::Check { configs, overrides } => {
            let mut code = exit::OK;
            for c in &configs {
                match load(c, &overrides).and_then(Scenario::prepare) {
                    Ok(p) => {
                        for w in &p.warnings {
                            writeln!(err, "warning: {}: {w}", p.scenario.name)?;
                        }
                        writeln!(out, "{}: ok ({} checks)", p.scenario.name, p.checks.len())?;
                    }
                    Err(e) => {
                        writeln!(err, "error: {e}")?;
                        code = code.max(e.exit_code());
                    }
                }
            }
            Ok(code)
        }
        Command::ListChecks => {
            list_checks(out)?;
            Ok(exit::OK)
        }
        Command::ListScenarios => {
            for (name, _) in shipped::SHIPPED {
                writeln!(out, "{name}")?;
            }
            Ok(exit::OK)
        }
        Command::Describe { name } => {
            describe_name(&name, out)?;
            Ok(exit::OK)
        }
    })();
    match result {
        Ok(code) => code,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => exit::OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
