//! Brute-force oracles and property checkers for the test suite.
//!
//! Nothing here calls the solvers or the model formulas: every formula the
//! oracles need is written out again locally, so a shared bug cannot hide.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    pub scale: GridScale,
}

impl GridSpec {
    pub fn linear(lower: f64, upper: f64, points: usize) -> Self {
        Self { lower, upper, points, scale: GridScale::Linear }
    }

    pub fn log(lower: f64, upper: f64, points: usize) -> Self {
        Self { lower, upper, points, scale: GridScale::Log }
    }

    pub fn is_valid(&self) -> bool {
        self.lower < self.upper && self.points >= 3 && (self.scale == GridScale::Linear || self.lower > 0.0)
    }

    /// The `i`-th point; the last point is exactly `upper`.
    pub fn point(&self, i: usize) -> f64 {
        if i == 0 {
            return self.lower;
        }
        if i + 1 >= self.points {
            return self.upper;
        }
        let u = i as f64 / (self.points - 1) as f64;
        match self.scale {
            GridScale::Linear => self.lower + u * (self.upper - self.lower),
            GridScale::Log => (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp(),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.point(i)).collect()
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::linear(0.0, 1.0, 1_000_000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Min,
    Max,
}

fn better(dir: Direction, a: f64, b: f64) -> bool {
    match dir {
        Direction::Min => a < b,
        Direction::Max => a > b,
    }
}

/// Best point of `objective` on `spec`; ties go to the smaller index.
fn scan(objective: &(impl Fn(f64) -> f64 + Sync), spec: &GridSpec, dir: Direction) -> (usize, f64, f64) {
    const CHUNK: usize = 4096;
    let chunks = spec.points.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut best = (usize::MAX, f64::NAN, f64::NAN);
            for i in c * CHUNK..((c + 1) * CHUNK).min(spec.points) {
                let x = spec.point(i);
                let v = objective(x);
                if best.0 == usize::MAX || better(dir, v, best.2) {
                    best = (i, x, v);
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((usize::MAX, f64::NAN, f64::NAN), |acc, cur| {
            if acc.0 == usize::MAX || better(dir, cur.2, acc.2) {
                cur
            } else {
                acc
            }
        })
}

/// Exhaustive search over `spec`, then once more over 1000 points spanning
/// the incumbent's two neighbours. Returns `(x, objective(x))`.
pub fn grid_argopt(objective: impl Fn(f64) -> f64 + Sync, spec: &GridSpec, dir: Direction) -> (f64, f64) {
    assert!(spec.is_valid(), "invalid grid {spec:?}");
    let (i, x, v) = scan(&objective, spec, dir);
    let lo = spec.point(i.saturating_sub(1));
    let hi = spec.point((i + 1).min(spec.points - 1));
    if lo >= hi {
        return (x, v);
    }
    let fine = GridSpec::linear(lo, hi, 1000);
    let (_, fx, fv) = scan(&objective, &fine, dir);
    if better(dir, fv, v) {
        (fx, fv)
    } else {
        (x, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiconvexCheck {
    pub passed: bool,
    /// First ordered triple `x < y < z` with `f(y) > max(f(x), f(z))`.
    pub witness: Option<(f64, f64, f64)>,
}

/// Samples ordered triples in `bracket` and checks
/// `f(y) <= max(f(x), f(z)) + 1e-12` for each.
pub fn check_quasiconvex(f: impl Fn(f64) -> f64, bracket: (f64, f64), samples: usize, seed: u64) -> QuasiconvexCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = bracket;
    for _ in 0..samples {
        let mut t = [rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
        t.sort_by(f64::total_cmp);
        let [x, y, z] = t;
        if f(y) > f(x).max(f(z)) + 1e-12 {
            return QuasiconvexCheck { passed: false, witness: Some((x, y, z)) };
        }
    }
    QuasiconvexCheck { passed: true, witness: None }
}

/// A point of the server dual: capacity multiplier and per-vehicle multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub nu: f64,
    pub mu: Vec<f64>,
}

impl DualPoint {
    fn dot_diff(&self, other: &DualPoint, base: &DualPoint) -> f64 {
        self.nu * (other.nu - base.nu)
            + self.mu.iter().zip(other.mu.iter().zip(&base.mu)).map(|(g, (o, b))| g * (o - b)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgradientCheck {
    pub passed: bool,
    /// Smallest `-D(y) - (-D(x) + g.(y - x))` seen.
    pub worst_slack: f64,
    pub witness: Option<DualPoint>,
}

/// Samples `y` with `0 <= y <= upper` coordinate-wise and checks
/// `-D(y) >= -D(x) + g.(y - x) - 1e-9`, i.e. that `g` is a subgradient of `-D`
/// at `x`.
pub fn check_subgradient_inequality(
    dual: impl Fn(&DualPoint) -> f64,
    point: &DualPoint,
    g: &DualPoint,
    upper: &DualPoint,
    trials: usize,
    seed: u64,
) -> SubgradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = -dual(point);
    let mut worst = f64::INFINITY;
    let mut witness = None;
    for _ in 0..trials {
        let y = DualPoint {
            nu: rng.random::<f64>() * upper.nu,
            mu: upper.mu.iter().map(|u| rng.random::<f64>() * u).collect(),
        };
        let slack = -dual(&y) - (base + g.dot_diff(&y, point));
        if slack < worst {
            worst = slack;
            if slack < -1e-9 && witness.is_none() {
                witness = Some(y);
            }
        }
    }
    SubgradientCheck { passed: witness.is_none(), worst_slack: worst, witness }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// `None` when no grid point satisfies every constraint.
    pub utility: Option<f64>,
    /// Per vehicle `(s, P, f, fs)` of the best point.
    pub point: Vec<(f64, f64, f64, f64)>,
    pub evaluated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleGrids {
    pub power_points: usize,
    pub cpu_points: usize,
    pub server_points: usize,
    /// Smallest power as a fraction of `P_max` (the power grid is logarithmic).
    pub power_floor: f64,
}

impl Default for OracleGrids {
    fn default() -> Self {
        Self { power_points: 50, cpu_points: 50, server_points: 50, power_floor: 1e-9 }
    }
}

const TOL: f64 = 1e-9;

/// Exhaustive search over the size grid and coarse grids for power, vehicle
/// frequency and server share, for one or two vehicles.
///
/// The utility is separable across vehicles and only the capacity constraint
/// couples them, so each vehicle's best `(s, P, f)` is tabulated per server
/// grid value and the tables are then combined over share pairs within `F`.
pub fn exhaustive_joint_oracle(cfg: &ScenarioConfig, grids: &OracleGrids) -> OracleResult {
    let n = cfg.vehicles.len();
    assert!((1..=2).contains(&n), "oracle supports one or two vehicles");
    assert!(cfg.size_grid.len() <= 8, "oracle supports at most 8 sizes");
    let big_f = cfg.server_capacity;
    let shares: Vec<f64> = (1..=grids.server_points).map(|j| big_f * j as f64 / grids.server_points as f64).collect();
    let mut evaluated = 0;
    let tables: Vec<Vec<Option<(f64, (f64, f64, f64))>>> = cfg
        .vehicles
        .iter()
        .map(|v| {
            let powers = GridSpec::log(v.p_max * grids.power_floor, v.p_max, grids.power_points).values();
            let cpus = if v.f_max > v.f_min {
                GridSpec::linear(v.f_min, v.f_max, grids.cpu_points).values()
            } else {
                vec![v.f_min]
            };
            shares
                .iter()
                .map(|&fs| {
                    let mut best: Option<(f64, (f64, f64, f64))> = None;
                    for &s in &cfg.size_grid {
                        let acc = 1.0 - cfg.accuracy.a * (-cfg.accuracy.b * s).exp();
                        if acc < v.delta - TOL {
                            continue;
                        }
                        let bits = cfg.bits_per_pixel * s * s;
                        for &p in &powers {
                            let snr = p * v.gain / (v.bandwidth * cfg.noise_density);
                            let rate = v.bandwidth * (1.0 + snr).log2();
                            for &f in &cpus {
                                evaluated += 1;
                                let lat = bits / rate + bits * v.cycles_per_bit / fs + v.workload / f;
                                if lat > cfg.window * (1.0 + TOL) {
                                    continue;
                                }
                                let profit = v.rho * (1.0 + bits).ln();
                                let e_cv = (v.kappa * f * f * f + v.zeta) * v.workload / f;
                                let e_com = p * bits / rate;
                                let e_ser = cfg.kappa_ser * fs * fs * bits * v.cycles_per_bit;
                                let u = profit - v.beta * e_ser - v.gamma * (e_cv + e_com);
                                if best.is_none_or(|(b, _)| u > b) {
                                    best = Some((u, (s, p, f)));
                                }
                            }
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    let mut best: Option<(f64, Vec<(f64, f64, f64, f64)>)> = None;
    let mut consider = |u: f64, point: Vec<(f64, f64, f64, f64)>| {
        if best.as_ref().is_none_or(|(b, _)| u > *b) {
            best = Some((u, point));
        }
    };
    if n == 1 {
        for (j, entry) in tables[0].iter().enumerate() {
            if let Some((u, (s, p, f))) = entry {
                consider(*u, vec![(*s, *p, *f, shares[j])]);
            }
        }
    } else {
        for (a, ea) in tables[0].iter().enumerate() {
            let Some((ua, (sa, pa, fa))) = ea else { continue };
            for (b, eb) in tables[1].iter().enumerate() {
                if shares[a] + shares[b] > big_f * (1.0 + TOL) {
                    break;
                }
                if let Some((ub, (sb, pb, fb))) = eb {
                    consider(ua + ub, vec![(*sa, *pa, *fa, shares[a]), (*sb, *pb, *fb, shares[b])]);
                }
            }
        }
    }
    match best {
        Some((u, point)) => OracleResult { utility: Some(u), point, evaluated },
        None => OracleResult { utility: None, point: Vec::new(), evaluated },
    }
}
