//! Scenario runner for the angiogenesis diffusion solver.
//!
//! A scenario is a TOML file naming a lattice, model constants, a time
//! schedule, analytic initial data and the checks to run. [`runner`] executes
//! it, writes `AKF1` snapshots, CSV tables and a JSON report, and maps the
//! outcome to an exit code.

pub mod cli;
pub mod export;
pub mod recipe;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod shipped;
pub mod snapshot;

/// Exit codes of `angio run`.
pub mod exit {
    pub const OK: u8 = 0;
    /// I/O or unexpected solver error.
    pub const RUNTIME: u8 = 1;
    /// Configuration could not be parsed or validated.
    pub const CONFIG: u8 = 2;
    /// A Picard slab hit `k_max` without reaching the tolerance.
    pub const NOT_CONVERGED: u8 = 3;
    /// At least one check failed.
    pub const CHECK_FAILED: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] angio_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad snapshot: {0}")]
    Format(String),
    #[error("{0}")]
    Config(String),
}

impl Error {
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => exit::CONFIG,
            Error::Core(angio_core::Error::Positivity { .. }) => exit::CHECK_FAILED,
            _ => exit::RUNTIME,
        }
    }
}
