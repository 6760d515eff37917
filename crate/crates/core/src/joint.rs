//! Block-coordinate ascent over `(s, P, f, fs)` and the baseline schemes.
//!
//! Each outer iteration updates the sizes, then powers, then vehicle
//! frequencies, then server shares, each block solved exactly with the others
//! frozen, and stops once the relative utility change drops below `xi`.
//!
//! A single run is pinned by its starting sizes: once the server block makes
//! every latency budget tight, no block can move alone. The solver therefore
//! runs the ascent from several starting sizes (one per grid value by default)
//! and keeps the best run.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Infeasibility, Result};
use crate::model::{self, Allocation, ConstraintAudit, ScenarioConfig, SizeMode, UtilityTerms, FEASIBILITY_RTOL, UTILITY_ATOL};
use crate::server::{self, DualOptions};
use crate::vehicle::{self, FormulaVariant, PowerContext, MIN_POWER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeId {
    Proposed,
    /// Fixed computation model size.
    Fcms,
    /// Fixed server computation partition.
    Fscp,
    /// Fixed vehicle CPU frequency (optimizes the rest).
    Farc,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [SchemeId::Proposed, SchemeId::Fcms, SchemeId::Fscp, SchemeId::Farc];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::Proposed => "proposed",
            SchemeId::Fcms => "fcms",
            SchemeId::Fscp => "fscp",
            SchemeId::Farc => "farc",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" => Ok(SchemeId::Proposed),
            "fcms" => Ok(SchemeId::Fcms),
            "fscp" => Ok(SchemeId::Fscp),
            "farc" => Ok(SchemeId::Farc),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Blocks held fixed during the ascent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Frozen {
    pub size: Option<Vec<f64>>,
    pub f: Option<Vec<f64>>,
    pub server: Option<Vec<f64>>,
}

impl Frozen {
    /// Default frozen values of each scheme: grid midpoint sizes, even server
    /// split, or mid-range vehicle frequencies.
    pub fn for_scheme(scheme: SchemeId, cfg: &ScenarioConfig) -> Self {
        let n = cfg.n();
        match scheme {
            SchemeId::Proposed => Frozen::default(),
            SchemeId::Fcms => {
                let m = cfg.size_grid.len();
                let mid = cfg.size_grid[m.div_ceil(2).max(1) - 1];
                Frozen { size: Some(vec![mid; n]), ..Frozen::default() }
            }
            SchemeId::Fscp => {
                Frozen { server: Some(vec![cfg.server_capacity / n as f64; n]), ..Frozen::default() }
            }
            SchemeId::Farc => Frozen {
                f: Some(cfg.vehicles.iter().map(|v| 0.5 * (v.f_min + v.f_max)).collect()),
                ..Frozen::default()
            },
        }
    }
}

/// Starting sizes tried by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// One start per grid value, each vehicle clamped into the sizes it can
    /// afford at the even server split.
    #[default]
    Grid,
    /// Only the smallest affordable size.
    Smallest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointOptions {
    /// Relative utility change that ends the outer loop.
    pub xi: f64,
    pub max_outer: usize,
    /// Bracket width at which the power bisection stops.
    pub eps: f64,
    pub power_max_iter: usize,
    pub dual: DualOptions,
    pub variant: FormulaVariant,
    pub starts: StartRule,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self {
            xi: 1e-4,
            max_outer: 50,
            eps: 1e-8,
            power_max_iter: 200,
            dual: DualOptions::default(),
            variant: FormulaVariant::default(),
            starts: StartRule::default(),
        }
    }
}

/// Largest per-vehicle change of each block in one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterStep {
    pub iter: usize,
    pub utility: f64,
    pub ds: f64,
    #[serde(rename = "dP")]
    pub d_power: f64,
    pub df: f64,
    pub dfs: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    pub size_updates: usize,
    pub power_bisection_iters: usize,
    pub cpu_updates: usize,
    pub dual_iters: usize,
    /// Server shares raised onto their latency floors after a dual run.
    pub server_repairs: usize,
    /// Vehicles whose initial power was clipped to `P_max`.
    pub power_repairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub scheme: SchemeId,
    pub allocation: Allocation,
    pub utility: f64,
    pub terms: UtilityTerms,
    /// `C(0), C(1), ..., C(outer_iters)`.
    pub utility_trace: Vec<f64>,
    /// Allocation after each outer iteration, starting with the initial one.
    pub history: Vec<Allocation>,
    pub steps: Vec<OuterStep>,
    pub outer_iters: usize,
    pub converged: bool,
    pub diagnostics: BlockDiagnostics,
    pub audit: ConstraintAudit,
    /// Grid value whose start produced this report.
    pub start_size: f64,
    pub starts_tried: usize,
    pub starts_feasible: usize,
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    if cur.abs() < 1e-12 {
        (cur - prev).abs()
    } else {
        ((cur - prev) / cur).abs()
    }
}

fn infeasible(vehicle: usize, reason: Infeasibility) -> Error {
    Error::Infeasible { vehicle, reason }
}

fn max_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Initial point for the given starting sizes: vehicle frequencies at `f_min`
/// (or frozen), powers at the latency bound for an even server split, and
/// server shares from the server block.
pub fn initialize(cfg: &ScenarioConfig, frozen: &Frozen, sizes: &[f64], opts: &JointOptions) -> Result<(Allocation, BlockDiagnostics)> {
    let n = cfg.n();
    let mut diag = BlockDiagnostics::default();
    let size = frozen.size.clone().unwrap_or_else(|| sizes.to_vec());
    let f = frozen.f.clone().unwrap_or_else(|| cfg.vehicles.iter().map(|v| v.f_min).collect());
    let split = frozen.server.clone().unwrap_or_else(|| vec![cfg.server_capacity / n as f64; n]);
    let mut power = Vec::with_capacity(n);
    for (i, v) in cfg.vehicles.iter().enumerate() {
        let p = match vehicle::power_lower_bound(v, cfg, size[i], split[i], f[i]) {
            Ok(b) => b.lower(),
            Err(_) => {
                diag.power_repairs += 1;
                v.p_max
            }
        };
        power.push(p.max(MIN_POWER));
    }
    let mut alloc = Allocation { f, power, size, server: split };
    update_server(&mut alloc, cfg, frozen, opts, &mut diag)?;
    Ok((alloc, diag))
}

fn update_server(
    alloc: &mut Allocation,
    cfg: &ScenarioConfig,
    frozen: &Frozen,
    opts: &JointOptions,
    diag: &mut BlockDiagnostics,
) -> Result<()> {
    let demands = server::server_demands(alloc, cfg)?;
    match &frozen.server {
        Some(fixed) => {
            for (i, (d, fs)) in demands.iter().zip(fixed).enumerate() {
                if d.lower > fs * (1.0 + FEASIBILITY_RTOL) {
                    let reason = Infeasibility::ServerCapacity { demand: d.lower, capacity: *fs };
                    return Err(infeasible(i, reason));
                }
            }
            alloc.server = fixed.clone();
        }
        None => {
            let sol = server::solve_server_dual(&demands, cfg.server_capacity, &opts.dual)?;
            diag.dual_iters += sol.iterations;
            diag.server_repairs += usize::from(sol.repaired);
            alloc.server = sol.server;
        }
    }
    Ok(())
}

fn update_sizes(alloc: &mut Allocation, cfg: &ScenarioConfig, opts: &JointOptions, diag: &mut BlockDiagnostics) -> Result<()> {
    for (i, v) in cfg.vehicles.iter().enumerate() {
        let sol = vehicle::solve_size(v, cfg, alloc.f[i], alloc.power[i], alloc.server[i], opts.variant)?
            .map_err(|r| infeasible(i, r))?;
        alloc.size[i] = sol.discrete;
        diag.size_updates += 1;
    }
    Ok(())
}

fn update_powers(alloc: &mut Allocation, cfg: &ScenarioConfig, opts: &JointOptions, diag: &mut BlockDiagnostics) -> Result<()> {
    for (i, v) in cfg.vehicles.iter().enumerate() {
        let bracket = vehicle::power_lower_bound(v, cfg, alloc.size[i], alloc.server[i], alloc.f[i])
            .map_err(|r| infeasible(i, r))?;
        let ctx = PowerContext::new(v, cfg, alloc.size[i]);
        let sol = vehicle::solve_power_bisection(&bracket, &ctx, opts.eps, opts.power_max_iter).map_err(|e| match e {
            Error::Capacity(r) => infeasible(i, r),
            other => other,
        })?;
        // bisection is only accurate to `eps`; keep a feasible incumbent that is no worse
        // (an incumbent a few ulps under the bound counts as sitting on it)
        let lower = bracket.lower();
        let current = alloc.power[i];
        let candidate = if current < lower && current >= lower * (1.0 - FEASIBILITY_RTOL) { lower } else { current };
        let keep = candidate >= lower && candidate <= bracket.p_max && ctx.energy(candidate) <= sol.energy;
        alloc.power[i] = if keep { candidate } else { sol.power };
        diag.power_bisection_iters += sol.iterations;
    }
    Ok(())
}

fn update_cpus(alloc: &mut Allocation, cfg: &ScenarioConfig, opts: &JointOptions, diag: &mut BlockDiagnostics) -> Result<()> {
    for (i, v) in cfg.vehicles.iter().enumerate() {
        let sol = vehicle::solve_cpu(v, cfg, alloc.size[i], alloc.power[i], alloc.server[i], opts.variant)?
            .map_err(|r| infeasible(i, r))?;
        alloc.f[i] = sol.f;
        diag.cpu_updates += 1;
    }
    Ok(())
}

/// Runs the block-coordinate ascent from `init`, skipping frozen blocks.
pub fn ascend_from(
    cfg: &ScenarioConfig,
    scheme: SchemeId,
    frozen: &Frozen,
    init: Allocation,
    mut diagnostics: BlockDiagnostics,
    opts: &JointOptions,
) -> Result<SolveReport> {
    let mut alloc = init;
    let mut prev = model::system_utility(&alloc, cfg)?;
    let mut utility_trace = vec![prev];
    let mut history = vec![alloc.clone()];
    let mut steps = Vec::new();
    let mut converged = false;
    let mut outer_iters = 0;
    while outer_iters < opts.max_outer {
        outer_iters += 1;
        let before = alloc.clone();
        if frozen.size.is_none() {
            update_sizes(&mut alloc, cfg, opts, &mut diagnostics)?;
        }
        update_powers(&mut alloc, cfg, opts, &mut diagnostics)?;
        if frozen.f.is_none() {
            update_cpus(&mut alloc, cfg, opts, &mut diagnostics)?;
        }
        update_server(&mut alloc, cfg, frozen, opts, &mut diagnostics)?;
        let cur = model::system_utility(&alloc, cfg)?;
        steps.push(OuterStep {
            iter: outer_iters,
            utility: cur,
            ds: max_change(&alloc.size, &before.size),
            d_power: max_change(&alloc.power, &before.power),
            df: max_change(&alloc.f, &before.f),
            dfs: max_change(&alloc.server, &before.server),
        });
        utility_trace.push(cur);
        history.push(alloc.clone());
        let change = relative_change(prev, cur);
        prev = cur;
        if change <= opts.xi {
            converged = true;
            break;
        }
    }
    let terms = model::utility_breakdown(&alloc, cfg)?;
    let audit = model::audit_constraints(&alloc, cfg, SizeMode::Grid);
    Ok(SolveReport {
        scheme,
        utility: terms.utility,
        terms,
        allocation: alloc,
        utility_trace,
        history,
        steps,
        outer_iters,
        converged,
        diagnostics,
        audit,
        start_size: f64::NAN,
        starts_tried: 1,
        starts_feasible: 1,
    })
}

/// Starting size vectors, one per grid value (deduplicated, in grid order).
///
/// Vehicle `n` starts at the largest grid value not above the target that
/// meets its accuracy bound and whose latency-bound power fits `P_max` at the
/// even server split; if none is below the target, its smallest such value.
pub fn start_sizes(cfg: &ScenarioConfig, frozen: &Frozen, rule: StartRule) -> Vec<(f64, Vec<f64>)> {
    let n = cfg.n();
    let f0: Vec<f64> = frozen.f.clone().unwrap_or_else(|| cfg.vehicles.iter().map(|v| v.f_min).collect());
    let split = frozen.server.clone().unwrap_or_else(|| vec![cfg.server_capacity / n as f64; n]);
    let affordable: Vec<Vec<f64>> = cfg
        .vehicles
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let eps1 = cfg.accuracy.min_size(v.delta) * (1.0 - FEASIBILITY_RTOL);
            cfg.size_grid
                .iter()
                .copied()
                .filter(|&s| s >= eps1 && vehicle::power_lower_bound(v, cfg, s, split[i], f0[i]).is_ok())
                .collect()
        })
        .collect();
    let targets: Vec<f64> = match rule {
        StartRule::Grid => cfg.size_grid.clone(),
        StartRule::Smallest => cfg.size_grid.first().copied().into_iter().collect(),
    };
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    for g in targets {
        let sizes: Vec<f64> = affordable
            .iter()
            .map(|ok| match ok.first() {
                // no affordable size: the start is rejected by `initialize`
                None => cfg.size_grid[0],
                Some(&lowest) => ok.iter().rev().copied().find(|&s| s <= g).unwrap_or(lowest),
            })
            .collect();
        if !out.iter().any(|(_, s)| *s == sizes) {
            out.push((g, sizes));
        }
    }
    out
}

/// Runs `scheme` with explicit frozen blocks.
pub fn solve_with_frozen(cfg: &ScenarioConfig, scheme: SchemeId, frozen: &Frozen, opts: &JointOptions) -> Result<SolveReport> {
    if cfg.server_capacity <= 0.0 {
        return Err(Error::Capacity(Infeasibility::NoCapacity { capacity: cfg.server_capacity }));
    }
    cfg.validate()?;
    let starts = if let Some(size) = &frozen.size {
        vec![(size[0], size.clone())]
    } else {
        start_sizes(cfg, frozen, opts.starts)
    };
    let runs: Vec<Result<SolveReport>> = starts
        .par_iter()
        .map(|(g, sizes)| {
            let (init, diag) = initialize(cfg, frozen, sizes, opts)?;
            let mut report = ascend_from(cfg, scheme, frozen, init, diag, opts)?;
            report.start_size = *g;
            Ok(report)
        })
        .collect();
    let starts_tried = runs.len();
    let starts_feasible = runs.iter().filter(|r| r.is_ok()).count();
    let mut best: Option<SolveReport> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(r) => {
                let better = match &best {
                    None => true,
                    Some(b) => (r.converged && !b.converged) || (r.converged == b.converged && r.utility > b.utility + UTILITY_ATOL),
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some(mut r) => {
            r.starts_tried = starts_tried;
            r.starts_feasible = starts_feasible;
            Ok(r)
        }
        None => Err(first_err.unwrap_or_else(|| Error::Config("size grid is empty".into()))),
    }
}

/// Runs one scheme with its default frozen blocks.
pub fn solve_scheme(cfg: &ScenarioConfig, scheme: SchemeId, opts: &JointOptions) -> Result<SolveReport> {
    solve_with_frozen(cfg, scheme, &Frozen::for_scheme(scheme, cfg), opts)
}

/// Joint optimization of all four blocks.
pub fn joint_solve(cfg: &ScenarioConfig, opts: &JointOptions) -> Result<SolveReport> {
    solve_scheme(cfg, SchemeId::Proposed, opts)
}

/// Continues the ascent from a given allocation, e.g. a converged one.
pub fn joint_solve_from(cfg: &ScenarioConfig, init: Allocation, opts: &JointOptions) -> Result<SolveReport> {
    cfg.validate()?;
    if !init.is_consistent(cfg.n()) {
        return Err(Error::Config("allocation length does not match the vehicle count".into()));
    }
    ascend_from(cfg, SchemeId::Proposed, &Frozen::default(), init, BlockDiagnostics::default(), opts)
}
