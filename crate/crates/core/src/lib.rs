//! Solver for the nonlinear renewal equation of a neural population
//! structured by the times elapsed since the last two discharges.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod output;
pub mod presets;
pub mod rate;
pub mod reduction;
pub mod steady;
pub mod transport;

pub use error::{Error, Result};
pub use grid::{build_grid, discretize_density, DensityField, Grid};
pub use rate::{eval_rate, verify_bounds, FiringRateSpec, RateTerm, ThresholdFn};
pub use transport::{run_simulation, step, CouplingMode, RunOptions, SimulationTrace};
