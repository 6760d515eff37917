//! Frame side length: concave relaxation, clamp into the feasible window, then
//! binary search over the discrete size grid.

use serde::{Deserialize, Serialize};

use super::FormulaVariant;
use crate::error::Infeasibility;
use crate::model::{self, ScenarioConfig, VehicleProfile, FEASIBILITY_RTOL};

/// Quantities frozen while the size block is solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeContext {
    pub rho: f64,
    pub beta: f64,
    pub gamma: f64,
    pub cycles_per_bit: f64,
    pub phi: f64,
    pub kappa_ser: f64,
    pub power: f64,
    pub server: f64,
    /// Upload rate at `power` (bit/s).
    pub rate: f64,
}

impl SizeContext {
    pub fn new(profile: &VehicleProfile, cfg: &ScenarioConfig, power: f64, server: f64) -> crate::Result<Self> {
        Ok(Self {
            rho: profile.rho,
            beta: profile.beta,
            gamma: profile.gamma,
            cycles_per_bit: profile.cycles_per_bit,
            phi: cfg.bits_per_pixel,
            kappa_ser: cfg.kappa_ser,
            power,
            server,
            rate: model::transmit_rate(power, profile, cfg.noise_density)?,
        })
    }

    /// Energy price per transmitted bit: server inference plus upload.
    pub fn cost_per_bit(&self) -> f64 {
        self.beta * self.kappa_ser * self.server * self.server * self.cycles_per_bit
            + self.gamma * self.power / self.rate
    }
}

/// The size-dependent part of one vehicle's utility.
pub fn size_objective(s: f64, ctx: &SizeContext) -> f64 {
    let bits = ctx.phi * s * s;
    ctx.rho * bits.ln_1p() - ctx.cost_per_bit() * bits
}

/// Unconstrained maximizer of [`size_objective`] over `s >= 0`.
pub fn size_stationary_point(ctx: &SizeContext, variant: FormulaVariant) -> f64 {
    let a = match variant {
        FormulaVariant::Derivative => ctx.cost_per_bit(),
        FormulaVariant::Printed => ctx.cost_per_bit() * std::f64::consts::LN_2,
    };
    let inner = ctx.rho / (ctx.phi * a) - 1.0 / ctx.phi;
    inner.max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeBounds {
    /// Accuracy lower bound.
    pub eps1: f64,
    /// Latency upper bound; zero when conversion alone exhausts the window.
    pub eps2: f64,
    pub lower: f64,
    pub upper: f64,
    pub feasible: bool,
}

/// Feasible interval of side lengths given the frozen variables and the
/// vehicle CPU frequency `f`.
pub fn size_bounds(ctx: &SizeContext, profile: &VehicleProfile, cfg: &ScenarioConfig, f: f64) -> SizeBounds {
    let eps1 = cfg.accuracy.min_size(profile.delta);
    let remaining = cfg.window - profile.workload / f;
    let eps2 = if remaining > 0.0 {
        let (r, fs, phi) = (ctx.rate, ctx.server, ctx.phi);
        (remaining * r * fs / (phi * fs + phi * ctx.cycles_per_bit * r)).sqrt()
    } else {
        0.0
    };
    let lower = cfg.s_min().max(eps1);
    let upper = cfg.s_max().min(eps2);
    let feasible = remaining > 0.0 && lower <= upper * (1.0 + FEASIBILITY_RTOL);
    SizeBounds { eps1, eps2, lower, upper, feasible }
}

/// Continuous optimum: the stationary point clamped into `[lower, upper]`.
///
/// The objective is concave in `s^2`, so this clamp covers every interior and
/// boundary case.
pub fn solve_size_continuous(
    ctx: &SizeContext,
    bounds: &SizeBounds,
    variant: FormulaVariant,
) -> Result<f64, Infeasibility> {
    if !bounds.feasible {
        return Err(Infeasibility::SizeWindow { lower: bounds.lower, upper: bounds.upper });
    }
    let upper = bounds.upper.max(bounds.lower);
    Ok(size_stationary_point(ctx, variant).clamp(bounds.lower, upper))
}

/// Rounds the continuous optimum onto the grid.
///
/// Only grid points inside the feasible window are eligible. A binary search
/// brackets `s_cont` between adjacent eligible points and the better of the two
/// (by `objective`) wins; an exact hit is returned as is.
pub fn solve_size_discrete(
    s_cont: f64,
    grid: &[f64],
    bounds: &SizeBounds,
    objective: impl Fn(f64) -> f64,
) -> Result<f64, Infeasibility> {
    let lo = bounds.lower * (1.0 - FEASIBILITY_RTOL);
    let hi = bounds.upper * (1.0 + FEASIBILITY_RTOL);
    let window: Vec<f64> = grid.iter().copied().filter(|&g| g >= lo && g <= hi).collect();
    match window.len() {
        0 => Err(Infeasibility::EmptyGridWindow { lower: bounds.lower, upper: bounds.upper }),
        1 => Ok(window[0]),
        m => {
            let (mut a, mut b) = (0usize, m - 1);
            while b - a > 1 {
                let c = (a + b) / 2;
                if s_cont > window[c] {
                    a = c;
                } else if s_cont < window[c] {
                    b = c;
                } else {
                    return Ok(window[c]);
                }
            }
            if s_cont == window[a] {
                return Ok(window[a]);
            }
            if s_cont == window[b] {
                return Ok(window[b]);
            }
            if objective(window[a]) >= objective(window[b]) {
                Ok(window[a])
            } else {
                Ok(window[b])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeSolution {
    pub continuous: f64,
    pub discrete: f64,
    pub bounds: SizeBounds,
}

/// Full size block for one vehicle: bounds, continuous clamp, grid rounding.
pub fn solve_size(
    profile: &VehicleProfile,
    cfg: &ScenarioConfig,
    f: f64,
    power: f64,
    server: f64,
    variant: FormulaVariant,
) -> crate::Result<Result<SizeSolution, Infeasibility>> {
    let ctx = SizeContext::new(profile, cfg, power, server)?;
    let bounds = size_bounds(&ctx, profile, cfg, f);
    let continuous = match solve_size_continuous(&ctx, &bounds, variant) {
        Ok(s) => s,
        Err(e) => return Ok(Err(e)),
    };
    Ok(solve_size_discrete(continuous, &cfg.size_grid, &bounds, |s| size_objective(s, &ctx))
        .map(|discrete| SizeSolution { continuous, discrete, bounds }))
}
