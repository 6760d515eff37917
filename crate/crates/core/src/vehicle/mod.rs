//! Per-vehicle block solvers.
//!
//! Each solver optimizes one vehicle's variable with every other variable
//! frozen. They are pure and independent across vehicles.

mod cpu;
mod power;
mod size;

use serde::{Deserialize, Serialize};

pub use cpu::{cpu_stationary_point, solve_cpu, CpuSolution};
pub use power::{
    parametric_power_min, power_lower_bound, solve_power_bisection, PowerBracket, PowerContext,
    PowerSolution, MIN_POWER,
};
pub use size::{
    size_bounds, size_objective, size_stationary_point, solve_size, solve_size_continuous,
    solve_size_discrete, SizeBounds, SizeContext, SizeSolution,
};

/// Which closed forms to use for the size stationary point and the
/// unconstrained CPU minimizer.
///
/// `Derivative` differentiates the stated objectives. `Printed` keeps the
/// alternative forms in circulation: an extra `1/ln 2` inside the size
/// stationary point, and `cbrt(zeta C / (2 kappa))` for the CPU minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaVariant {
    #[default]
    Derivative,
    Printed,
}
