//! Seeded scenario generation and the JSON experiment configuration.
//!
//! Vehicles are dropped uniformly over a square area with the roadside unit at
//! its center. Channel gains follow `h = theta d^-3 X`, where `X` is the
//! squared magnitude of a unit-variance complex Gaussian.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Infeasibility, Result};
use crate::joint::SchemeId;
use crate::model::{AccuracyModel, ScenarioConfig, VehicleProfile};
use crate::vehicle;

/// Bumped whenever the generator's draw sequence changes.
pub const GENERATOR_VERSION: u32 = 1;

/// Fading redraws allowed per vehicle before giving up.
pub const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalParams {
    #[serde(rename = "T")]
    pub window: f64,
    #[serde(rename = "F")]
    pub server_capacity: f64,
    pub sigma2: f64,
    pub phi: f64,
    pub kappa_ser: f64,
    pub acc_a: f64,
    pub acc_b: f64,
}

impl Default for GlobalParams {
    fn default() -> Self {
        let acc = AccuracyModel::default();
        Self {
            window: 1.0,
            server_capacity: 2.5e9,
            sigma2: 3.98e-21,
            phi: 24.0,
            kappa_ser: 1e-27,
            acc_a: acc.a,
            acc_b: acc.b,
        }
    }
}

/// Per-vehicle defaults plus the layout and channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefaultsTable {
    #[serde(rename = "B")]
    pub bandwidth: f64,
    pub f_max: f64,
    pub f_min: f64,
    pub c: f64,
    #[serde(rename = "P_max")]
    pub p_max: f64,
    pub delta: f64,
    pub kappa: f64,
    pub rho: f64,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
    #[serde(rename = "workload_C")]
    pub workload: f64,
    #[serde(rename = "N")]
    pub vehicles: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub s_step: f64,
    pub area_side_m: f64,
    pub theta_db: f64,
    pub path_loss_exponent: f64,
    pub min_distance_m: f64,
}

impl Default for DefaultsTable {
    fn default() -> Self {
        Self {
            bandwidth: 10e6,
            f_max: 2e9,
            f_min: 0.5e9,
            c: 3.6875,
            p_max: 2.0,
            delta: 0.85,
            kappa: 1e-27,
            rho: 0.04,
            beta: 1.0,
            gamma: 1.0,
            zeta: 0.1,
            workload: 5e7,
            vehicles: 30,
            s_min: 100.0,
            s_max: 800.0,
            s_step: 20.0,
            area_side_m: 5000.0,
            theta_db: 32.0,
            path_loss_exponent: 3.0,
            min_distance_m: 10.0,
        }
    }
}

impl DefaultsTable {
    /// `s_min, s_min + s_step, ...` up to `s_max`, with `s_max` always included.
    pub fn size_grid(&self) -> Vec<f64> {
        let mut grid = Vec::new();
        let mut k = 0usize;
        loop {
            let s = self.s_min + k as f64 * self.s_step;
            if s > self.s_max * (1.0 + 1e-12) {
                break;
            }
            grid.push(s);
            k += 1;
        }
        if grid.last().is_none_or(|&last| last < self.s_max * (1.0 - 1e-12)) {
            grid.push(self.s_max);
        }
        grid
    }

    fn profile(&self, gain: f64) -> VehicleProfile {
        VehicleProfile {
            kappa: self.kappa,
            zeta: self.zeta,
            workload: self.workload,
            bandwidth: self.bandwidth,
            gain,
            cycles_per_bit: self.c,
            rho: self.rho,
            beta: self.beta,
            gamma: self.gamma,
            delta: self.delta,
            p_max: self.p_max,
            f_min: self.f_min,
            f_max: self.f_max,
        }
    }

    pub fn channel(&self) -> ChannelModel {
        ChannelModel {
            theta: 10f64.powf(self.theta_db / 10.0),
            exponent: self.path_loss_exponent,
            area_side: self.area_side_m,
            min_distance: self.min_distance_m,
        }
    }
}

/// Index-aligned partial override of one vehicle's parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleOverride {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(rename = "workload_C", skip_serializing_if = "Option::is_none")]
    pub workload: Option<f64>,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(rename = "P_max", skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_max: Option<f64>,
}

impl VehicleOverride {
    fn apply(&self, p: &mut VehicleProfile) {
        let set = |dst: &mut f64, src: Option<f64>| {
            if let Some(v) = src {
                *dst = v;
            }
        };
        set(&mut p.kappa, self.kappa);
        set(&mut p.zeta, self.zeta);
        set(&mut p.workload, self.workload);
        set(&mut p.bandwidth, self.bandwidth);
        set(&mut p.gain, self.h);
        set(&mut p.cycles_per_bit, self.c);
        set(&mut p.rho, self.rho);
        set(&mut p.beta, self.beta);
        set(&mut p.gamma, self.gamma);
        set(&mut p.delta, self.delta);
        set(&mut p.p_max, self.p_max);
        set(&mut p.f_min, self.f_min);
        set(&mut p.f_max, self.f_max);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepAxis {
    B,
    #[serde(rename = "f_min")]
    FMin,
    #[serde(rename = "s_min")]
    SMin,
    #[serde(rename = "delta")]
    Delta,
    F,
    T,
    #[serde(rename = "s_max")]
    SMax,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 7] =
        [SweepAxis::B, SweepAxis::FMin, SweepAxis::SMin, SweepAxis::Delta, SweepAxis::F, SweepAxis::T, SweepAxis::SMax];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::B => "B",
            SweepAxis::FMin => "f_min",
            SweepAxis::SMin => "s_min",
            SweepAxis::Delta => "delta",
            SweepAxis::F => "F",
            SweepAxis::T => "T",
            SweepAxis::SMax => "s_max",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis `{s}` (expected one of B, f_min, s_min, delta, F, T, s_max)")))
    }
}

/// Values are in SI units (Hz, s, pixels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// The experiment configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub global: GlobalParams,
    pub defaults: DefaultsTable,
    pub vehicles: Vec<VehicleOverride>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeId>,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            global: GlobalParams::default(),
            defaults: DefaultsTable::default(),
            vehicles: Vec::new(),
            size_grid: None,
            sweep: None,
            seed: 42,
            scheme: None,
        }
    }
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ConfigFile = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        file.check()?;
        Ok(file)
    }

    fn check(&self) -> Result<()> {
        let d = &self.defaults;
        let g = &self.global;
        for (key, v) in [
            ("global.T", g.window),
            ("global.sigma2", g.sigma2),
            ("global.phi", g.phi),
            ("global.kappa_ser", g.kappa_ser),
            ("global.acc_a", g.acc_a),
            ("global.acc_b", g.acc_b),
            ("defaults.B", d.bandwidth),
            ("defaults.f_max", d.f_max),
            ("defaults.f_min", d.f_min),
            ("defaults.c", d.c),
            ("defaults.P_max", d.p_max),
            ("defaults.kappa", d.kappa),
            ("defaults.rho", d.rho),
            ("defaults.beta", d.beta),
            ("defaults.gamma", d.gamma),
            ("defaults.zeta", d.zeta),
            ("defaults.workload_C", d.workload),
            ("defaults.s_min", d.s_min),
            ("defaults.s_max", d.s_max),
            ("defaults.s_step", d.s_step),
            ("defaults.area_side_m", d.area_side_m),
            ("defaults.path_loss_exponent", d.path_loss_exponent),
            ("defaults.min_distance_m", d.min_distance_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        // zero capacity is a valid, infeasible instance
        if !(g.server_capacity.is_finite() && g.server_capacity >= 0.0) {
            return Err(Error::Config(format!("global.F must be nonnegative, got {}", g.server_capacity)));
        }
        if !(0.0..1.0).contains(&d.delta) {
            return Err(Error::Config(format!("defaults.delta must lie in [0, 1), got {}", d.delta)));
        }
        if d.vehicles == 0 {
            return Err(Error::Config("defaults.N must be at least 1".into()));
        }
        if d.s_min > d.s_max {
            return Err(Error::Config("defaults.s_min exceeds defaults.s_max".into()));
        }
        if d.f_min > d.f_max {
            return Err(Error::Config("defaults.f_min exceeds defaults.f_max".into()));
        }
        if self.vehicles.len() > d.vehicles {
            return Err(Error::Config(format!("{} vehicle overrides for N = {}", self.vehicles.len(), d.vehicles)));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep.values must not be empty".into()));
            }
        }
        Ok(())
    }

    /// Copy with `axis` set to `value`; per-vehicle overrides of that field
    /// are dropped so the swept value applies to every vehicle.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Self {
        let mut out = self.clone();
        match axis {
            SweepAxis::B => {
                out.defaults.bandwidth = value;
                out.vehicles.iter_mut().for_each(|v| v.bandwidth = None);
            }
            SweepAxis::FMin => {
                out.defaults.f_min = value;
                out.vehicles.iter_mut().for_each(|v| v.f_min = None);
            }
            SweepAxis::Delta => {
                out.defaults.delta = value;
                out.vehicles.iter_mut().for_each(|v| v.delta = None);
            }
            SweepAxis::F => out.global.server_capacity = value,
            SweepAxis::T => out.global.window = value,
            SweepAxis::SMin => {
                out.defaults.s_min = value;
                if let Some(grid) = &mut out.size_grid {
                    grid.retain(|&s| s >= value);
                }
            }
            SweepAxis::SMax => {
                out.defaults.s_max = value;
                if let Some(grid) = &mut out.size_grid {
                    grid.retain(|&s| s <= value);
                }
            }
        }
        out
    }
}

/// Geometry and channel law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Linear path-gain constant.
    pub theta: f64,
    pub exponent: f64,
    pub area_side: f64,
    pub min_distance: f64,
}

impl ChannelModel {
    pub fn gain(&self, distance: f64, fading: f64) -> f64 {
        self.theta * distance.max(self.min_distance).powf(-self.exponent) * fading
    }

    /// Squared magnitude of a unit-variance complex Gaussian.
    pub fn draw_fading(rng: &mut impl Rng) -> f64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        0.5 * (re * re + im * im)
    }

    /// Uniform position in the square and its distance to the center.
    pub fn draw_position(&self, rng: &mut impl Rng) -> ((f64, f64), f64) {
        let x = rng.random::<f64>() * self.area_side;
        let y = rng.random::<f64>() * self.area_side;
        let c = 0.5 * self.area_side;
        ((x, y), (x - c).hypot(y - c).max(self.min_distance))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub generator_version: u32,
    pub seed: u64,
    pub positions: Vec<(f64, f64)>,
    pub distances: Vec<f64>,
    /// Fading draws rejected because the vehicle could not start feasibly.
    pub rejections: usize,
    pub config: ScenarioConfig,
}

/// Whether vehicle `v` can start: some grid size meets its accuracy bound
/// with a latency-bound power within `P_max` at `f_min` and an even split.
fn startable(v: &VehicleProfile, cfg: &ScenarioConfig) -> bool {
    let eps1 = cfg.accuracy.min_size(v.delta) * (1.0 - crate::model::FEASIBILITY_RTOL);
    let split = cfg.server_capacity / cfg.n() as f64;
    cfg.size_grid
        .iter()
        .find(|&&s| s >= eps1)
        .is_some_and(|&s| vehicle::power_lower_bound(v, cfg, s, split, v.f_min).is_ok())
}

/// Builds a scenario from the configuration, drawing positions and fading
/// from `seed`. Draws are consumed for every vehicle, including those whose
/// gain is overridden, so an override never shifts another vehicle's channel.
pub fn generate_scenario(seed: u64, n_vehicles: usize, file: &ConfigFile) -> Result<Scenario> {
    if n_vehicles == 0 {
        return Err(Error::Config("at least one vehicle is required".into()));
    }
    file.check()?;
    let d = &file.defaults;
    let g = &file.global;
    let channel = d.channel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n_vehicles);
    let mut distances = Vec::with_capacity(n_vehicles);
    for _ in 0..n_vehicles {
        let (p, dist) = channel.draw_position(&mut rng);
        positions.push(p);
        distances.push(dist);
    }
    let fading: Vec<f64> = (0..n_vehicles).map(|_| ChannelModel::draw_fading(&mut rng)).collect();
    let vehicles = (0..n_vehicles)
        .map(|i| {
            let mut p = d.profile(channel.gain(distances[i], fading[i]));
            if let Some(o) = file.vehicles.get(i) {
                o.apply(&mut p);
            }
            p
        })
        .collect();
    let mut config = ScenarioConfig {
        vehicles,
        window: g.window,
        server_capacity: g.server_capacity,
        noise_density: g.sigma2,
        bits_per_pixel: g.phi,
        kappa_ser: g.kappa_ser,
        accuracy: AccuracyModel { a: g.acc_a, b: g.acc_b },
        size_grid: file.size_grid.clone().unwrap_or_else(|| d.size_grid()),
        rng_seed: seed,
    };
    if config.server_capacity == 0.0 {
        return Err(Error::Capacity(Infeasibility::NoCapacity { capacity: 0.0 }));
    }
    config.validate()?;
    let mut rejections = 0;
    for i in 0..n_vehicles {
        let pinned = file.vehicles.get(i).is_some_and(|o| o.h.is_some());
        let mut tries = 0;
        while !pinned && !startable(&config.vehicles[i], &config) {
            tries += 1;
            rejections += 1;
            if tries > MAX_REDRAWS {
                return Err(Error::Config(format!("vehicle {i}: no feasible fading draw in {MAX_REDRAWS} attempts")));
            }
            config.vehicles[i].gain = channel.gain(distances[i], ChannelModel::draw_fading(&mut rng));
        }
    }
    Ok(Scenario { generator_version: GENERATOR_VERSION, seed, positions, distances, rejections, config })
}

/// What a configuration file asks to run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub scheme: Option<SchemeId>,
    pub sweep: Option<SweepSpec>,
    pub file: ConfigFile,
}

impl ExperimentPlan {
    /// `(axis, value)` points of the sweep, in file order.
    pub fn sweep_points(&self) -> Vec<(SweepAxis, f64)> {
        self.sweep.iter().flat_map(|s| s.values.iter().map(move |&v| (s.axis, v))).collect()
    }

    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        generate_scenario(seed, self.file.defaults.vehicles, &self.file)
    }
}

/// Reads a configuration file and generates its scenario at the file's seed.
pub fn parse_config(path: impl AsRef<Path>) -> Result<(ScenarioConfig, ExperimentPlan)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let file = ConfigFile::from_json(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let plan = ExperimentPlan { seed: file.seed, scheme: file.scheme, sweep: file.sweep.clone(), file };
    let scenario = plan.scenario(plan.seed)?;
    Ok((scenario.config, plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let file = ConfigFile::from_json(r#"{"seed": 7}"#).unwrap();
        assert_eq!(file.defaults, DefaultsTable::default());
        assert_eq!(file.global, GlobalParams::default());
        assert_eq!(file.seed, 7);
        let sc = generate_scenario(7, file.defaults.vehicles, &file).unwrap();
        assert_eq!(sc.config.n(), 30);
        assert_eq!(sc.config.size_grid.len(), 36);
        assert_eq!(sc.config.vehicles[3].bandwidth, 10e6);
        assert_eq!(sc.config.window, 1.0);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ConfigFile::from_json(r#"{"seed": 1, "global": {"Tx": 1.0}}"#).unwrap_err();
        assert!(err.to_string().contains("Tx"), "{err}");
        assert!(ConfigFile::from_json(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn type_mismatch_reports_line() {
        let err = ConfigFile::from_json("{\n  \"seed\": \"x\"\n}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn negative_window_rejected() {
        let err = ConfigFile::from_json(r#"{"global": {"T": -1.0}}"#).unwrap_err();
        assert!(err.to_string().contains("global.T"), "{err}");
    }

    #[test]
    fn bandwidth_sweep_plan() {
        let file = ConfigFile::from_json(r#"{"sweep": {"axis": "B", "values": [10e6, 20e6, 30e6, 40e6, 50e6]}}"#).unwrap();
        let plan = ExperimentPlan { seed: file.seed, scheme: None, sweep: file.sweep.clone(), file };
        let pts = plan.sweep_points();
        assert_eq!(pts.len(), 5);
        assert!(pts.iter().all(|(a, _)| *a == SweepAxis::B));
        assert_eq!(pts[4].1, 50e6);
    }

    #[test]
    fn generation_is_deterministic() {
        let file = ConfigFile::default();
        let a = generate_scenario(42, 30, &file).unwrap();
        let b = generate_scenario(42, 30, &file).unwrap();
        assert_eq!(a, b);
        let c = generate_scenario(43, 30, &file).unwrap();
        assert_ne!(a.config, c.config);
    }

    #[test]
    fn path_loss_law() {
        let ch = DefaultsTable::default().channel();
        let h1 = ch.gain(100.0, 0.7);
        let h2 = ch.gain(200.0, 0.7);
        assert!((h2 / h1 - 0.125).abs() < 1e-15);
        assert_eq!(ch.gain(1.0, 1.0), ch.gain(10.0, 1.0));
    }

    #[test]
    fn theta_is_32_db() {
        let ch = DefaultsTable::default().channel();
        assert!((ch.theta - 1584.893192461114).abs() < 1e-9);
    }

    #[test]
    fn positions_inside_area() {
        for seed in 0..10 {
            let sc = generate_scenario(seed, 30, &ConfigFile::default()).unwrap();
            for ((x, y), d) in sc.positions.iter().zip(&sc.distances) {
                assert!((0.0..=5000.0).contains(x) && (0.0..=5000.0).contains(y));
                assert!(*d >= 10.0 && *d <= 2500.0 * 2f64.sqrt());
            }
            assert!(sc.config.vehicles.iter().all(|v| v.gain > 0.0));
        }
    }

    #[test]
    fn overrides_apply_by_index() {
        let file = ConfigFile::from_json(r#"{"defaults": {"N": 3}, "vehicles": [{}, {"h": 1e-6, "rho": 0.1}]}"#).unwrap();
        let sc = generate_scenario(1, 3, &file).unwrap();
        assert_eq!(sc.config.vehicles[1].gain, 1e-6);
        assert_eq!(sc.config.vehicles[1].rho, 0.1);
        assert_eq!(sc.config.vehicles[0].rho, 0.04);
    }

    #[test]
    fn default_grid() {
        let g = DefaultsTable::default().size_grid();
        assert_eq!(g.first(), Some(&100.0));
        assert_eq!(g.last(), Some(&800.0));
        assert_eq!(g[17], 440.0);
        let odd = DefaultsTable { s_min: 100.0, s_max: 150.0, s_step: 20.0, ..DefaultsTable::default() };
        assert_eq!(odd.size_grid(), vec![100.0, 120.0, 140.0, 150.0]);
    }

    #[test]
    fn axis_application() {
        let base = ConfigFile::default();
        assert_eq!(base.with_axis(SweepAxis::SMin, 300.0).defaults.size_grid()[0], 300.0);
        assert_eq!(base.with_axis(SweepAxis::F, 3e9).global.server_capacity, 3e9);
        assert_eq!(base.with_axis(SweepAxis::FMin, 0.7e9).defaults.f_min, 0.7e9);
    }

    #[test]
    fn redraw_counts_rejections() {
        // tiny P_max forces redraws for far vehicles
        let file = ConfigFile::from_json(r#"{"defaults": {"P_max": 1e-7}}"#).unwrap();
        match generate_scenario(3, 30, &file) {
            Ok(sc) => assert!(sc.rejections > 0),
            Err(e) => assert!(e.to_string().contains("fading")),
        }
    }
}
