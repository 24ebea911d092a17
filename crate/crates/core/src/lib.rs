//! Solver kernels for the nonlocal angiogenesis diffusion system.
//!
//! The unknowns are a phase-space density `p(t, x, v)` and a concentration
//! `c(t, x)`. The density diffuses in `(x, v)`, is damped by the running time
//! integral of its own velocity marginal and is activated through `α(c)ρ(v)`;
//! the concentration diffuses and is consumed at rate `η c j`, where `j` is the
//! speed moment of `p`.
//!
//! Everything here is allocation-only numerics (`no_std` + `alloc`):
//!
//! * [`grid`]: periodic truncated lattice, field containers, quadrature, norms.
//! * [`heat`]: exact spectral heat flow and the Gaussian velocity profile.
//! * [`linear`]: Strang-split solver for the frozen-coefficient linear problem.
//! * [`moments`]: velocity moments and the running time integral.
//! * [`picard`]: the fixed-point drivers for the pure and the coupled problems.
//! * [`harness`]: a priori bounds as machine-checkable predicates.
//! * [`oracles`]: independent reference discretizations (feature `oracles`).
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
mod fft;
pub mod grid;
pub mod harness;
pub mod heat;
pub mod linear;
pub mod moments;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod picard;

pub use error::{Error, Result};
pub use grid::{GridSpec, LatticeField, PhaseField, Role, SpatialField, Trajectory};
pub use harness::{BoundCheck, EnergyTrace, Verdict};
pub use heat::{gaussian_rho, heat_step, HeatPlan, VelocityProfile};
pub use linear::{
    advance_linear, heat_upper_solution, solve_linear, Activation, CoefficientTrack, Positivity, Schedule, SourceTrack,
    SpatialTrack,
};
pub use moments::MomentSet;
pub use picard::{
    advance_c, alpha_of_c, picard_coupled, picard_pure, CoupledSolution, Initialization, IterationDiagnostics,
    ModelParams, PicardOptions, PureSolution,
};
