//! System model: conversion, communication and server formulas, the system
//! utility, and the feasibility audit of an [`Allocation`].
//!
//! Every other module computes times, energies and utility only through the
//! functions here. All functions are pure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether a constraint holds.
pub const FEASIBILITY_RTOL: f64 = 1e-9;

/// Absolute tolerance for utility comparisons between candidate allocations.
pub const UTILITY_ATOL: f64 = 1e-12;

/// Per-vehicle parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleProfile {
    /// Effective switched capacitance of the vehicle CPU.
    pub kappa: f64,
    /// Static CPU power (W).
    pub zeta: f64,
    /// Conversion workload per frame (cycles).
    #[serde(rename = "workload_C")]
    pub workload: f64,
    /// Bandwidth (Hz).
    #[serde(rename = "B")]
    pub bandwidth: f64,
    /// Linear channel power gain.
    #[serde(rename = "h")]
    pub gain: f64,
    /// Server processing density (cycle/bit).
    #[serde(rename = "c")]
    pub cycles_per_bit: f64,
    /// Profit weight.
    pub rho: f64,
    /// Price of server energy (1/J).
    pub beta: f64,
    /// Price of vehicle energy (1/J).
    pub gamma: f64,
    /// Minimum analytics accuracy, in [0, 1).
    pub delta: f64,
    #[serde(rename = "P_max")]
    pub p_max: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl VehicleProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("kappa", self.kappa),
            ("zeta", self.zeta),
            ("workload_C", self.workload),
            ("B", self.bandwidth),
            ("h", self.gain),
            ("c", self.cycles_per_bit),
            ("rho", self.rho),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("P_max", self.p_max),
            ("f_min", self.f_min),
            ("f_max", self.f_max),
        ] {
            positive(name, value)?;
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::OutOfRange { name: "delta", value: self.delta });
        }
        if self.f_min > self.f_max {
            return Err(Error::OutOfRange { name: "f_min", value: self.f_min });
        }
        Ok(())
    }
}

/// Analytics accuracy `1 - a * exp(-b * s)` as a function of frame side length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyModel {
    #[serde(rename = "acc_a")]
    pub a: f64,
    #[serde(rename = "acc_b")]
    pub b: f64,
}

impl Default for AccuracyModel {
    fn default() -> Self {
        Self { a: 1.578, b: 6.5e-3 }
    }
}

impl AccuracyModel {
    pub fn accuracy(&self, s: f64) -> f64 {
        analytics_accuracy(s, self.a, self.b)
    }

    /// Smallest side length whose accuracy reaches `delta`; the linear-in-`s`
    /// form of the accuracy constraint.
    pub fn min_size(&self, delta: f64) -> f64 {
        (self.a.ln() - (1.0 - delta).ln()) / self.b
    }
}

/// Whether the size constraint is checked against the discrete grid or the
/// relaxed interval `[s_min, s_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SizeMode {
    #[default]
    Grid,
    Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub vehicles: Vec<VehicleProfile>,
    /// Time-window length (s).
    #[serde(rename = "T")]
    pub window: f64,
    /// Server total capacity (Hz).
    #[serde(rename = "F")]
    pub server_capacity: f64,
    /// Noise power spectral density (W/Hz).
    #[serde(rename = "sigma2")]
    pub noise_density: f64,
    /// Bits per pixel.
    #[serde(rename = "phi")]
    pub bits_per_pixel: f64,
    pub kappa_ser: f64,
    #[serde(flatten)]
    pub accuracy: AccuracyModel,
    /// Admissible side lengths, strictly ascending.
    pub size_grid: Vec<f64>,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    pub fn n(&self) -> usize {
        self.vehicles.len()
    }

    pub fn s_min(&self) -> f64 {
        self.size_grid[0]
    }

    pub fn s_max(&self) -> f64 {
        self.size_grid[self.size_grid.len() - 1]
    }

    pub fn validate(&self) -> Result<()> {
        positive("T", self.window)?;
        positive("F", self.server_capacity)?;
        positive("sigma2", self.noise_density)?;
        positive("phi", self.bits_per_pixel)?;
        positive("kappa_ser", self.kappa_ser)?;
        positive("acc_a", self.accuracy.a)?;
        positive("acc_b", self.accuracy.b)?;
        if self.vehicles.is_empty() {
            return Err(Error::Config("at least one vehicle is required".into()));
        }
        for v in &self.vehicles {
            v.validate()?;
        }
        if self.size_grid.is_empty() {
            return Err(Error::Config("size_grid must not be empty".into()));
        }
        if self.size_grid.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("size_grid entries must be positive".into()));
        }
        if self.size_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("size_grid must be strictly ascending".into()));
        }
        Ok(())
    }

    /// Data bits of one `s x s` frame.
    pub fn frame_bits(&self, s: f64) -> f64 {
        self.bits_per_pixel * s * s
    }
}

/// Decision vector for all vehicles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Vehicle CPU frequencies (Hz).
    pub f: Vec<f64>,
    /// Transmit powers (W).
    #[serde(rename = "P")]
    pub power: Vec<f64>,
    /// Frame side lengths (pixels).
    #[serde(rename = "s")]
    pub size: Vec<f64>,
    /// Server frequency shares (Hz).
    #[serde(rename = "fs")]
    pub server: Vec<f64>,
}

impl Allocation {
    pub fn uniform(n: usize, f: f64, power: f64, size: f64, server: f64) -> Self {
        Self { f: vec![f; n], power: vec![power; n], size: vec![size; n], server: vec![server; n] }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn is_consistent(&self, n: usize) -> bool {
        let all = [&self.f, &self.power, &self.size, &self.server];
        all.iter().all(|v| v.len() == n && v.iter().all(|x| x.is_finite()))
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositive { name, value })
    }
}

/// Per-frame conversion time `C / f`.
pub fn conversion_time(f: f64, workload: f64) -> Result<f64> {
    positive("f", f)?;
    Ok(workload / f)
}

/// Per-frame conversion energy `(kappa f^3 + zeta) * C / f`.
pub fn conversion_energy(f: f64, profile: &VehicleProfile) -> Result<f64> {
    let t = conversion_time(f, profile.workload)?;
    Ok((profile.kappa * f * f * f + profile.zeta) * t)
}

/// Shannon rate `B log2(1 + P h / (B sigma2))`.
pub fn transmit_rate(power: f64, profile: &VehicleProfile, noise_density: f64) -> Result<f64> {
    positive("P", power)?;
    let b = profile.bandwidth;
    Ok(b * (power * profile.gain / (b * noise_density)).ln_1p() / std::f64::consts::LN_2)
}

/// Upload energy `P * phi s^2 / R`.
pub fn comm_energy(power: f64, s: f64, rate: f64, phi: f64) -> Result<f64> {
    positive("rate", rate)?;
    Ok(power * phi * s * s / rate)
}

/// Profit `rho ln(1 + phi s^2)` of one vehicle's frame.
pub fn data_profit(s: f64, rho: f64, phi: f64) -> f64 {
    debug_assert!(s >= 0.0);
    rho * (phi * s * s).ln_1p()
}

/// Server inference time `phi s^2 c / fs`.
pub fn server_time(s: f64, cycles_per_bit: f64, fs: f64, phi: f64) -> Result<f64> {
    positive("fs", fs)?;
    Ok(phi * s * s * cycles_per_bit / fs)
}

/// Server inference energy `kappa_ser fs^2 phi s^2 c`.
pub fn server_energy(fs: f64, s: f64, cycles_per_bit: f64, kappa_ser: f64, phi: f64) -> Result<f64> {
    positive("fs", fs)?;
    Ok(kappa_ser * fs * fs * phi * s * s * cycles_per_bit)
}

/// `1 - a exp(-b s)`; negative for small `s`.
pub fn analytics_accuracy(s: f64, acc_a: f64, acc_b: f64) -> f64 {
    1.0 - acc_a * (-acc_b * s).exp()
}

/// Per-vehicle terms of the system utility.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UtilityTerms {
    pub profit: f64,
    pub e_cv: f64,
    pub e_com: f64,
    pub e_ser: f64,
    pub utility: f64,
}

impl std::ops::AddAssign for UtilityTerms {
    fn add_assign(&mut self, o: Self) {
        self.profit += o.profit;
        self.e_cv += o.e_cv;
        self.e_com += o.e_com;
        self.e_ser += o.e_ser;
        self.utility += o.utility;
    }
}

/// Utility summand and energies of vehicle `n`.
pub fn vehicle_terms(n: usize, alloc: &Allocation, cfg: &ScenarioConfig) -> Result<UtilityTerms> {
    let v = &cfg.vehicles[n];
    let phi = cfg.bits_per_pixel;
    let s = alloc.size[n];
    let rate = transmit_rate(alloc.power[n], v, cfg.noise_density)?;
    let profit = data_profit(s, v.rho, phi);
    let e_cv = conversion_energy(alloc.f[n], v)?;
    let e_com = comm_energy(alloc.power[n], s, rate, phi)?;
    let e_ser = server_energy(alloc.server[n], s, v.cycles_per_bit, cfg.kappa_ser, phi)?;
    let utility = profit - (v.beta * e_ser + v.gamma * (e_cv + e_com));
    Ok(UtilityTerms { profit, e_cv, e_com, e_ser, utility })
}

/// Totals over all vehicles.
pub fn utility_breakdown(alloc: &Allocation, cfg: &ScenarioConfig) -> Result<UtilityTerms> {
    let mut total = UtilityTerms::default();
    for n in 0..cfg.n() {
        total += vehicle_terms(n, alloc, cfg)?;
    }
    Ok(total)
}

/// Profit minus price-weighted server, conversion and upload energy.
pub fn system_utility(alloc: &Allocation, cfg: &ScenarioConfig) -> Result<f64> {
    Ok(utility_breakdown(alloc, cfg)?.utility)
}

/// End-to-end per-frame latency of vehicle `n`: upload + inference + conversion.
pub fn latency(n: usize, alloc: &Allocation, cfg: &ScenarioConfig) -> Result<f64> {
    let v = &cfg.vehicles[n];
    let s = alloc.size[n];
    let bits = cfg.frame_bits(s);
    let upload = if bits == 0.0 { 0.0 } else { bits / transmit_rate(alloc.power[n], v, cfg.noise_density)? };
    let infer = if bits == 0.0 { 0.0 } else { server_time(s, v.cycles_per_bit, alloc.server[n], cfg.bits_per_pixel)? };
    Ok(upload + infer + conversion_time(alloc.f[n], v.workload)?)
}

/// Worst (smallest) slack of each constraint; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slacks {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintAudit {
    /// Size on the grid (or inside `[s_min, s_max]` in interval mode).
    pub c1: Vec<bool>,
    /// `f_min <= f <= f_max`.
    pub c2: Vec<bool>,
    /// `sum fs <= F`.
    pub c3: bool,
    /// `0 < P <= P_max`.
    pub c4: Vec<bool>,
    /// Accuracy at least `delta`.
    pub c5: Vec<bool>,
    /// Latency at most `T`.
    pub c6: Vec<bool>,
    /// `fs > 0`.
    pub c7: Vec<bool>,
    pub worst_slack: Slacks,
}

impl ConstraintAudit {
    pub fn passes(&self) -> bool {
        self.c3
            && [&self.c1, &self.c2, &self.c4, &self.c5, &self.c6, &self.c7]
                .iter()
                .all(|v| v.iter().all(|&b| b))
    }

    /// Names of violated constraints with the offending vehicle, for diagnostics.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let per_vehicle = [
            ("C1", &self.c1),
            ("C2", &self.c2),
            ("C4", &self.c4),
            ("C5", &self.c5),
            ("C6", &self.c6),
            ("C7", &self.c7),
        ];
        for (name, flags) in per_vehicle {
            for (n, ok) in flags.iter().enumerate() {
                if !ok {
                    out.push(format!("{name}[{n}]"));
                }
            }
        }
        if !self.c3 {
            out.push("C3".into());
        }
        out
    }
}

fn within_upper(value: f64, bound: f64) -> bool {
    value <= bound + FEASIBILITY_RTOL * bound.abs().max(f64::MIN_POSITIVE)
}

fn within_lower(value: f64, bound: f64) -> bool {
    value >= bound - FEASIBILITY_RTOL * bound.abs().max(f64::MIN_POSITIVE)
}

/// Grid value nearest to `s`, with its distance.
pub fn nearest_grid(grid: &[f64], s: f64) -> (f64, f64) {
    grid.iter()
        .map(|&g| (g, (g - s).abs()))
        .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Evaluates every constraint of the joint problem. Total: never fails, even
/// on nonpositive powers or frequencies (those just fail their constraint).
pub fn audit_constraints(alloc: &Allocation, cfg: &ScenarioConfig, mode: SizeMode) -> ConstraintAudit {
    let n = cfg.n();
    let mut audit = ConstraintAudit {
        c1: vec![false; n],
        c2: vec![false; n],
        c3: false,
        c4: vec![false; n],
        c5: vec![false; n],
        c6: vec![false; n],
        c7: vec![false; n],
        worst_slack: Slacks {
            c1: f64::INFINITY,
            c2: f64::INFINITY,
            c3: 0.0,
            c4: f64::INFINITY,
            c5: f64::INFINITY,
            c6: f64::INFINITY,
            c7: f64::INFINITY,
        },
    };
    if !alloc.is_consistent(n) {
        audit.worst_slack = Slacks {
            c1: f64::NEG_INFINITY,
            c2: f64::NEG_INFINITY,
            c3: f64::NEG_INFINITY,
            c4: f64::NEG_INFINITY,
            c5: f64::NEG_INFINITY,
            c6: f64::NEG_INFINITY,
            c7: f64::NEG_INFINITY,
        };
        return audit;
    }
    let (s_min, s_max) = (cfg.s_min(), cfg.s_max());
    let w = &mut audit.worst_slack;
    for i in 0..n {
        let v = &cfg.vehicles[i];
        let s = alloc.size[i];

        let (ok1, slack1) = match mode {
            SizeMode::Grid => {
                let (g, dist) = nearest_grid(&cfg.size_grid, s);
                (dist <= FEASIBILITY_RTOL * g, -dist)
            }
            SizeMode::Interval => {
                (within_lower(s, s_min) && within_upper(s, s_max), (s - s_min).min(s_max - s))
            }
        };
        audit.c1[i] = ok1;
        w.c1 = w.c1.min(slack1);

        let f = alloc.f[i];
        audit.c2[i] = within_lower(f, v.f_min) && within_upper(f, v.f_max);
        w.c2 = w.c2.min((f - v.f_min).min(v.f_max - f));

        let p = alloc.power[i];
        audit.c4[i] = p > 0.0 && within_upper(p, v.p_max);
        w.c4 = w.c4.min(p.min(v.p_max - p));

        // Linear-in-s form: accuracy(s) >= delta  <=>  s >= (ln a - ln(1 - delta)) / b.
        let s_acc = cfg.accuracy.min_size(v.delta);
        audit.c5[i] = within_lower(s, s_acc);
        w.c5 = w.c5.min(cfg.accuracy.accuracy(s) - v.delta);

        let fs = alloc.server[i];
        audit.c7[i] = fs > 0.0;
        w.c7 = w.c7.min(fs);

        let slack6 = match latency(i, alloc, cfg) {
            Ok(t) => cfg.window - t,
            Err(_) => f64::NEG_INFINITY,
        };
        audit.c6[i] = slack6 >= -FEASIBILITY_RTOL * cfg.window;
        w.c6 = w.c6.min(slack6);
    }
    let total: f64 = alloc.server.iter().sum();
    audit.c3 = within_upper(total, cfg.server_capacity);
    w.c3 = cfg.server_capacity - total;
    audit
}
