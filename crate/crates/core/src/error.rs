use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A damping coefficient went negative beyond the round-off clamp.
    #[error("negative coefficient {value:e} at index {index}")]
    CoefficientSign { index: usize, value: f64 },

    /// A quantity that must be nonnegative went negative beyond round-off.
    #[error("sign violation in {what}: {value:e} at index {index}")]
    Sign {
        what: &'static str,
        index: usize,
        value: f64,
    },

    /// Solver output fell below `-clamp`; round-off never produces this.
    #[error("positivity lost: {value:e} at index {index} (clamp {clamp:e})")]
    Positivity { index: usize, value: f64, clamp: f64 },

    #[error("configuration: {0}")]
    Configuration(String),

    #[error("velocity profile under-resolved: {cells} cells across the bump (need 4)")]
    Resolution { cells: usize },

    #[error("explicit step {dt:e} exceeds the stability limit {limit:e}")]
    Stability { dt: f64, limit: f64 },

    #[error("oracle failed: {0}")]
    Oracle(String),

    #[error("invalid data: {0}")]
    Data(String),
}
