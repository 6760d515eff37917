//! Vehicle CPU frequency: the conversion energy is convex in `f`, so the
//! unconstrained minimizer is clamped into the frequency range left by the
//! latency budget.

use serde::{Deserialize, Serialize};

use super::FormulaVariant;
use crate::error::Infeasibility;
use crate::model::{self, ScenarioConfig, VehicleProfile, FEASIBILITY_RTOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpuSolution {
    pub f: f64,
    /// Lowest admissible frequency: `max(C / tau_max, f_min)`.
    pub floor: f64,
    /// Unconstrained minimizer of the conversion energy.
    pub unconstrained: f64,
}

/// Unconstrained minimizer of `(kappa f^3 + zeta) C / f`.
pub fn cpu_stationary_point(profile: &VehicleProfile, variant: FormulaVariant) -> f64 {
    match variant {
        FormulaVariant::Derivative => (profile.zeta / (2.0 * profile.kappa)).cbrt(),
        FormulaVariant::Printed => (profile.zeta * profile.workload / (2.0 * profile.kappa)).cbrt(),
    }
}

pub fn solve_cpu(
    profile: &VehicleProfile,
    cfg: &ScenarioConfig,
    s: f64,
    power: f64,
    server: f64,
    variant: FormulaVariant,
) -> crate::Result<Result<CpuSolution, Infeasibility>> {
    let bits = cfg.frame_bits(s);
    let (upload, infer) = if bits == 0.0 {
        (0.0, 0.0)
    } else {
        let rate = model::transmit_rate(power, profile, cfg.noise_density)?;
        (bits / rate, model::server_time(s, profile.cycles_per_bit, server, cfg.bits_per_pixel)?)
    };
    let tau_max = cfg.window - upload - infer;
    if tau_max <= 0.0 {
        return Ok(Err(Infeasibility::NoLatencyBudget { remaining: tau_max }));
    }
    let floor = (profile.workload / tau_max).max(profile.f_min);
    if floor > profile.f_max * (1.0 + FEASIBILITY_RTOL) {
        return Ok(Err(Infeasibility::CpuBound { required: floor, f_max: profile.f_max }));
    }
    let unconstrained = cpu_stationary_point(profile, variant);
    let f = unconstrained.clamp(floor, profile.f_max.max(floor));
    Ok(Ok(CpuSolution { f, floor, unconstrained }))
}
