//! Transmit power: a fractional program solved by bisection on the ratio.
//!
//! The block minimizes `F(P) = gamma phi s^2 P / R(P)` over `[Q, P_max]`,
//! where `Q` is the smallest power meeting the latency budget. For a trial
//! ratio `t` the parametric problem `min aP - t R(P)` has a closed-form
//! minimizer; its sign tells on which side of the optimal ratio `t` lies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Infeasibility, Result};
use crate::model::{ScenarioConfig, VehicleProfile, FEASIBILITY_RTOL};

/// Smallest power handed out, so the rate stays positive when `Q = 0`.
pub const MIN_POWER: f64 = 1e-12;

/// Channel and price data of the power block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerContext {
    /// `gamma phi s^2`: price of one watt over one second of upload.
    pub weight: f64,
    pub bandwidth: f64,
    /// `h / (B sigma2)`: SNR per watt.
    pub snr_per_watt: f64,
}

impl PowerContext {
    pub fn new(profile: &VehicleProfile, cfg: &ScenarioConfig, s: f64) -> Self {
        Self {
            weight: profile.gamma * cfg.frame_bits(s),
            bandwidth: profile.bandwidth,
            snr_per_watt: profile.gain / (profile.bandwidth * cfg.noise_density),
        }
    }

    pub fn rate(&self, power: f64) -> f64 {
        self.bandwidth * (power * self.snr_per_watt).ln_1p() / std::f64::consts::LN_2
    }

    /// Price-weighted upload energy `F(P)`.
    pub fn energy(&self, power: f64) -> f64 {
        if self.weight == 0.0 {
            0.0
        } else {
            self.weight * power / self.rate(power)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBracket {
    /// Latency-induced lower bound on power.
    pub q: f64,
    pub p_max: f64,
    /// Upload rate needed to meet the budget (bit/s).
    pub rate_requirement: f64,
}

impl PowerBracket {
    /// Lower end of the search interval, kept strictly positive.
    pub fn lower(&self) -> f64 {
        self.q.max(MIN_POWER)
    }
}

/// Smallest power that fits the upload into what is left of the window after
/// conversion at `f` and inference at `fs`.
pub fn power_lower_bound(
    profile: &VehicleProfile,
    cfg: &ScenarioConfig,
    s: f64,
    server: f64,
    f: f64,
) -> std::result::Result<PowerBracket, Infeasibility> {
    let bits = cfg.frame_bits(s);
    let remaining = cfg.window - profile.workload / f;
    let for_upload = remaining * server - profile.cycles_per_bit * bits;
    if remaining <= 0.0 || (bits > 0.0 && for_upload <= 0.0) {
        return Err(Infeasibility::NoLatencyBudget { remaining: remaining - bits * profile.cycles_per_bit / server });
    }
    let rate_requirement = if bits == 0.0 { 0.0 } else { bits * server / for_upload };
    let b = profile.bandwidth;
    let q = pow2_m1(rate_requirement / b) * b * cfg.noise_density / profile.gain;
    if q > profile.p_max * (1.0 + FEASIBILITY_RTOL) {
        return Err(Infeasibility::PowerBound { required: q, p_max: profile.p_max });
    }
    Ok(PowerBracket { q, p_max: profile.p_max, rate_requirement })
}

/// `2^x - 1` without cancellation for small `x`.
fn pow2_m1(x: f64) -> f64 {
    (x * std::f64::consts::LN_2).exp_m1()
}

/// Minimizer of `weight P - t R(P)` over the bracket and the minimum value.
pub fn parametric_power_min(t: f64, bracket: &PowerBracket, ctx: &PowerContext) -> (f64, f64) {
    let lo = bracket.lower();
    let hi = bracket.p_max.max(lo);
    let p = if ctx.weight == 0.0 {
        if t > 0.0 {
            hi
        } else {
            lo
        }
    } else {
        let stationary = t * ctx.bandwidth / (ctx.weight * std::f64::consts::LN_2) - 1.0 / ctx.snr_per_watt;
        stationary.clamp(lo, hi)
    };
    (p, ctx.weight * p - t * ctx.rate(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSolution {
    pub power: f64,
    /// `F` at the returned power.
    pub energy: f64,
    pub iterations: usize,
    /// `(t_lower, t_upper)` after each bisection step.
    pub trace: Vec<(f64, f64)>,
}

/// Bisection on the ratio `t` over `[0, F(P_max)]` until the bracket is
/// narrower than `eps`.
pub fn solve_power_bisection(
    bracket: &PowerBracket,
    ctx: &PowerContext,
    eps: f64,
    max_iter: usize,
) -> Result<PowerSolution> {
    if bracket.q > bracket.p_max * (1.0 + FEASIBILITY_RTOL) {
        return Err(Error::Capacity(Infeasibility::PowerBound { required: bracket.q, p_max: bracket.p_max }));
    }
    if ctx.weight == 0.0 {
        let p = bracket.lower();
        return Ok(PowerSolution { power: p, energy: 0.0, iterations: 0, trace: Vec::new() });
    }
    let mut t_lo = 0.0;
    let mut t_hi = ctx.energy(bracket.p_max.max(bracket.lower()));
    let mut trace = Vec::new();
    let mut last_feasible: Option<f64> = None;
    let mut i = 0;
    while t_hi - t_lo > eps {
        i += 1;
        if i > max_iter {
            return Err(Error::NotConverged { what: "power bisection", iters: max_iter });
        }
        let t = 0.5 * (t_lo + t_hi);
        let (p, value) = parametric_power_min(t, bracket, ctx);
        if value <= 0.0 {
            t_hi = t;
            last_feasible = Some(p);
        } else {
            t_lo = t;
            last_feasible = None;
        }
        trace.push((t_lo, t_hi));
    }
    let power = match last_feasible {
        Some(p) => p,
        None => parametric_power_min(t_hi, bracket, ctx).0,
    };
    Ok(PowerSolution { power, energy: ctx.energy(power), iterations: i, trace })
}
