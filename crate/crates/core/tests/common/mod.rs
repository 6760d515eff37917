#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use vemeta::model::{AccuracyModel, ScenarioConfig, VehicleProfile};
use vemeta::scenario::{generate_scenario, ConfigFile};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn profile() -> VehicleProfile {
    VehicleProfile {
        kappa: 1e-27,
        zeta: 0.1,
        workload: 5e7,
        bandwidth: 1e7,
        gain: 1e-7,
        cycles_per_bit: 3.6875,
        rho: 0.04,
        beta: 1.0,
        gamma: 1.0,
        delta: 0.85,
        p_max: 2.0,
        f_min: 0.5e9,
        f_max: 2e9,
    }
}

pub fn config(vehicles: Vec<VehicleProfile>, grid: Vec<f64>) -> ScenarioConfig {
    ScenarioConfig {
        vehicles,
        window: 1.0,
        server_capacity: 2.5e9,
        noise_density: 3.98e-21,
        bits_per_pixel: 24.0,
        kappa_ser: 1e-27,
        accuracy: AccuracyModel::default(),
        size_grid: grid,
        rng_seed: 0,
    }
}

/// Default 30-vehicle scenario at `seed`.
pub fn scenario(seed: u64) -> ScenarioConfig {
    generate_scenario(seed, 30, &ConfigFile::default()).expect("default scenario").config
}

/// Two vehicles sharing the capacity two of thirty default vehicles would get,
/// with an eight-point size grid.
pub fn tiny_file(seed: u64) -> ConfigFile {
    let mut file = ConfigFile { seed, ..ConfigFile::default() };
    file.defaults.vehicles = 2;
    file.global.server_capacity = 2.0 * 2.5e9 / 30.0;
    file.size_grid = Some(vec![380.0, 440.0, 500.0, 560.0, 620.0, 680.0, 740.0, 800.0]);
    file
}

pub fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Profile with every parameter drawn over a wide range.
pub fn random_profile(rng: &mut impl Rng) -> VehicleProfile {
    let f_min = rng.random_range(0.1e9..1.0e9);
    VehicleProfile {
        kappa: log_uniform(rng, 1e-28, 1e-26),
        zeta: log_uniform(rng, 0.01, 1.0),
        workload: log_uniform(rng, 1e6, 2e8),
        bandwidth: rng.random_range(1e6..5e7),
        gain: log_uniform(rng, 1e-14, 1e-7),
        cycles_per_bit: log_uniform(rng, 0.5, 20.0),
        rho: rng.random_range(0.005..0.2),
        beta: rng.random_range(0.2..3.0),
        gamma: rng.random_range(0.2..3.0),
        delta: rng.random_range(0.5..0.9),
        p_max: rng.random_range(0.5..3.0),
        f_min,
        f_max: f_min + rng.random_range(0.2e9..2.5e9),
    }
}

/// Random ascending grid of `m` sizes in `[lo, hi]`.
pub fn random_grid(rng: &mut impl Rng, m: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..m).map(|_| rng.random_range(lo..hi).round()).collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Formulas written out again for the oracles.
pub mod direct {
    use vemeta::model::{ScenarioConfig, VehicleProfile};

    pub fn rate(p: f64, v: &VehicleProfile, sigma2: f64) -> f64 {
        v.bandwidth * (1.0 + p * v.gain / (v.bandwidth * sigma2)).log2()
    }

    /// Size objective with everything but `s` frozen.
    pub fn size_objective(s: f64, v: &VehicleProfile, cfg: &ScenarioConfig, p: f64, fs: f64) -> f64 {
        let bits = cfg.bits_per_pixel * s * s;
        let r = rate(p, v, cfg.noise_density);
        v.rho * (1.0 + bits).ln() - v.beta * cfg.kappa_ser * fs * fs * bits * v.cycles_per_bit - v.gamma * p * bits / r
    }

    /// Feasible size interval from the accuracy and latency constraints.
    pub fn size_interval(v: &VehicleProfile, cfg: &ScenarioConfig, p: f64, fs: f64, f: f64) -> (f64, f64) {
        let lo = ((cfg.accuracy.a / (1.0 - v.delta)).ln() / cfg.accuracy.b).max(cfg.size_grid[0]);
        let r = rate(p, v, cfg.noise_density);
        let budget = cfg.window - v.workload / f;
        let per_sq = cfg.bits_per_pixel / r + cfg.bits_per_pixel * v.cycles_per_bit / fs;
        let hi = if budget > 0.0 { (budget / per_sq).sqrt() } else { 0.0 };
        (lo, hi.min(*cfg.size_grid.last().unwrap()))
    }

    pub fn upload_energy(p: f64, s: f64, v: &VehicleProfile, cfg: &ScenarioConfig) -> f64 {
        v.gamma * p * cfg.bits_per_pixel * s * s / rate(p, v, cfg.noise_density)
    }

    pub fn conversion_energy(f: f64, v: &VehicleProfile) -> f64 {
        (v.kappa * f * f * f + v.zeta) * v.workload / f
    }

    pub fn utility(alloc: &vemeta::Allocation, cfg: &ScenarioConfig) -> f64 {
        (0..cfg.n())
            .map(|n| {
                let v = &cfg.vehicles[n];
                let s = alloc.size[n];
                let bits = cfg.bits_per_pixel * s * s;
                let r = rate(alloc.power[n], v, cfg.noise_density);
                let e_ser = cfg.kappa_ser * alloc.server[n].powi(2) * bits * v.cycles_per_bit;
                let e_com = alloc.power[n] * bits / r;
                v.rho * (1.0 + bits).ln() - v.beta * e_ser - v.gamma * (conversion_energy(alloc.f[n], v) + e_com)
            })
            .sum()
    }
}

/// Kendall-style check of a sequence against a direction. Differences within
/// `rtol` count as ties. Returns `(tau, discordant pairs)`.
pub fn kendall(values: &[f64], increasing: bool, rtol: f64) -> (f64, usize) {
    let mut concordant = 0usize;
    let mut discordant = 0usize;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            let d = values[j] - values[i];
            let scale = values[i].abs().max(values[j].abs()).max(1e-300);
            if d.abs() <= rtol * scale {
                continue;
            }
            if (d > 0.0) == increasing {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = values.len() * values.len().saturating_sub(1) / 2;
    let tau = if pairs == 0 { 0.0 } else { (concordant as f64 - discordant as f64) / pairs as f64 };
    (tau, discordant)
}
