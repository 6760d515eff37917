//! Server compute allocation.
//!
//! With sizes, powers and vehicle frequencies frozen, the server block is
//!
//! ```text
//! min  sum_n k_n / 2 * fs_n^2
//! s.t. sum_n fs_n <= F,   fs_n >= L_n
//! ```
//!
//! with `k_n = 2 beta kappa_ser phi s_n^2 c_n` and `L_n` the smallest share
//! that still meets vehicle `n`'s latency budget. It is solved by projected
//! subgradient descent on the negated Lagrange dual;
//! [`server_analytic_solution`] gives the closed form used to check it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Infeasibility, Result};
use crate::model::{self, Allocation, ScenarioConfig, FEASIBILITY_RTOL};

/// Smallest share handed to any vehicle, as a fraction of `F`.
pub const SHARE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerDemand {
    /// Curvature of the vehicle's server energy cost.
    pub k: f64,
    /// Latency-induced lower bound on the share (Hz).
    pub lower: f64,
}

/// Per-vehicle curvature and share lower bound for the frozen `alloc`.
pub fn server_demands(alloc: &Allocation, cfg: &ScenarioConfig) -> Result<Vec<ServerDemand>> {
    (0..cfg.n())
        .map(|n| {
            let v = &cfg.vehicles[n];
            let bits = cfg.frame_bits(alloc.size[n]);
            let k = 2.0 * v.beta * cfg.kappa_ser * bits * v.cycles_per_bit;
            if bits == 0.0 {
                return Ok(ServerDemand { k, lower: 0.0 });
            }
            let rate = model::transmit_rate(alloc.power[n], v, cfg.noise_density)?;
            let remaining = cfg.window - model::conversion_time(alloc.f[n], v.workload)? - bits / rate;
            if remaining <= 0.0 {
                return Err(Error::Infeasible { vehicle: n, reason: Infeasibility::NoLatencyBudget { remaining } });
            }
            Ok(ServerDemand { k, lower: bits * v.cycles_per_bit / remaining })
        })
        .collect()
}

fn check_capacity(demands: &[ServerDemand], capacity: f64) -> Result<()> {
    let demand: f64 = demands.iter().map(|d| d.lower).sum();
    if demand > capacity * (1.0 + FEASIBILITY_RTOL) {
        return Err(Error::Capacity(Infeasibility::ServerCapacity { demand, capacity }));
    }
    Ok(())
}

/// Closed-form optimum: each vehicle gets exactly its lower bound, since the
/// cost increases in every share. Fails when the bounds exceed `capacity`.
pub fn server_analytic_solution(demands: &[ServerDemand], capacity: f64) -> Result<Vec<f64>> {
    check_capacity(demands, capacity)?;
    let floor = SHARE_FLOOR * capacity;
    Ok(demands.iter().map(|d| d.lower.max(floor)).collect())
}

/// Server energy cost `sum k_n / 2 fs_n^2`.
pub fn server_cost(server: &[f64], demands: &[ServerDemand]) -> f64 {
    server.iter().zip(demands).map(|(fs, d)| 0.5 * d.k * fs * fs).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    /// Multiplier of the capacity constraint.
    pub nu: f64,
    /// Multipliers of the per-vehicle lower bounds.
    pub mu: Vec<f64>,
}

impl DualState {
    pub fn zero(n: usize) -> Self {
        Self { nu: 0.0, mu: vec![0.0; n] }
    }

    /// `mu_n = k_n L_n`, the multipliers at which every share sits on its
    /// lower bound.
    pub fn warm(demands: &[ServerDemand]) -> Self {
        Self { nu: 0.0, mu: demands.iter().map(|d| d.k * d.lower).collect() }
    }
}

/// Lagrangian minimizer `fs_n = (mu_n - nu) / k_n`, floored at a small
/// positive share.
pub fn dual_primal_step(state: &DualState, demands: &[ServerDemand], capacity: f64) -> Vec<f64> {
    let floor = SHARE_FLOOR * capacity;
    demands
        .iter()
        .zip(&state.mu)
        .map(|(d, mu)| if d.k > 0.0 { ((mu - state.nu) / d.k).max(floor) } else { d.lower.max(floor) })
        .collect()
}

/// Subgradient of the negated dual function `-D` at the point whose Lagrangian
/// minimizer is `server`: `(F - sum fs, fs_n - L_n)`.
pub fn dual_subgradient(server: &[f64], demands: &[ServerDemand], capacity: f64) -> (f64, Vec<f64>) {
    let g_nu = capacity - server.iter().sum::<f64>();
    let g_mu = server.iter().zip(demands).map(|(fs, d)| fs - d.lower).collect();
    (g_nu, g_mu)
}

/// Dual function value.
pub fn dual_value(state: &DualState, demands: &[ServerDemand], capacity: f64) -> f64 {
    let server = dual_primal_step(state, demands, capacity);
    let mut value = -state.nu * capacity;
    for ((fs, d), mu) in server.iter().zip(demands).zip(&state.mu) {
        value += 0.5 * d.k * fs * fs + (state.nu - mu) * fs + mu * d.lower;
    }
    value
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    /// Steps `a k_n / (1 + t)` for `mu_n` and `a / sum(1/k_n) / (1 + t)` for `nu`.
    Diminishing { scale: f64 },
    /// Same curvature scaling without the decay.
    Constant { scale: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Diminishing { scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualInit {
    #[default]
    Warm,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualOptions {
    pub step: StepRule,
    /// Stop once the share change implied by a step is below `tol * F`.
    pub tol: f64,
    pub max_iter: usize,
    pub init: DualInit,
    pub record_trace: bool,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self { step: StepRule::default(), tol: 1e-9, max_iter: 10_000, init: DualInit::Warm, record_trace: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTracePoint {
    pub iter: usize,
    pub nu: f64,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSolution {
    pub server: Vec<f64>,
    pub dual: DualState,
    pub iterations: usize,
    pub dual_value: f64,
    pub primal_value: f64,
    /// Shares were raised onto their lower bounds after the dual loop.
    pub repaired: bool,
    pub trace: Vec<DualTracePoint>,
}

pub fn solve_server_dual(demands: &[ServerDemand], capacity: f64, opts: &DualOptions) -> Result<ServerSolution> {
    check_capacity(demands, capacity)?;
    let n = demands.len();
    let mut state = match opts.init {
        DualInit::Warm => DualState::warm(demands),
        DualInit::Zero => DualState::zero(n),
    };
    let inv_k: f64 = demands.iter().filter(|d| d.k > 0.0).map(|d| 1.0 / d.k).sum();
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(DualTracePoint { iter: 0, nu: state.nu, mu: state.mu.clone() });
    }
    let mut iterations = 0;
    let mut converged = false;
    for t in 0..opts.max_iter {
        iterations = t + 1;
        let server = dual_primal_step(&state, demands, capacity);
        let (g_nu, g_mu) = dual_subgradient(&server, demands, capacity);
        let (scale, decay) = match opts.step {
            StepRule::Diminishing { scale } => (scale, 1.0 / (1.0 + t as f64)),
            StepRule::Constant { scale } => (scale, 1.0),
        };
        let nu_step = if inv_k > 0.0 { scale * decay / inv_k } else { 0.0 };
        let new_nu = (state.nu - nu_step * g_nu).max(0.0);
        let d_nu = (new_nu - state.nu).abs() * inv_k;
        state.nu = new_nu;
        let mut d_mu = 0.0;
        for ((mu, g), d) in state.mu.iter_mut().zip(&g_mu).zip(demands) {
            if d.k == 0.0 {
                continue;
            }
            let new_mu = (*mu - scale * decay * d.k * g).max(0.0);
            d_mu += ((new_mu - *mu) / d.k).powi(2);
            *mu = new_mu;
        }
        if opts.record_trace {
            trace.push(DualTracePoint { iter: iterations, nu: state.nu, mu: state.mu.clone() });
        }
        if d_nu < opts.tol * capacity && d_mu.sqrt() < opts.tol * capacity {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged { what: "server dual", iters: opts.max_iter });
    }
    let mut server = dual_primal_step(&state, demands, capacity);
    let mut repaired = false;
    for (fs, d) in server.iter_mut().zip(demands) {
        if *fs < d.lower {
            // rounding in (k L) / k alone is not a repair
            repaired |= *fs < d.lower * (1.0 - FEASIBILITY_RTOL);
            *fs = d.lower;
        }
    }
    let total: f64 = server.iter().sum();
    if total > capacity {
        // rebalance excess above the lower bounds proportionally
        let excess: f64 = server.iter().zip(demands).map(|(fs, d)| fs - d.lower).sum();
        let shrink = if excess > 0.0 { ((excess - (total - capacity)) / excess).max(0.0) } else { 0.0 };
        for (fs, d) in server.iter_mut().zip(demands) {
            *fs = d.lower + (*fs - d.lower) * shrink;
        }
        repaired = true;
    }
    Ok(ServerSolution {
        primal_value: server_cost(&server, demands),
        dual_value: dual_value(&state, demands, capacity),
        server,
        dual: state,
        iterations,
        repaired,
        trace,
    })
}

/// Server block for a frozen allocation: demands, then the dual method.
pub fn solve_server(alloc: &Allocation, cfg: &ScenarioConfig, opts: &DualOptions) -> Result<ServerSolution> {
    let demands = server_demands(alloc, cfg)?;
    solve_server_dual(&demands, cfg.server_capacity, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demands() -> Vec<ServerDemand> {
        vec![
            ServerDemand { k: 2e-10, lower: 6e8 },
            ServerDemand { k: 5e-11, lower: 9e8 },
            ServerDemand { k: 1e-9, lower: 3e8 },
        ]
    }

    #[test]
    fn analytic_is_lower_bounds() {
        let fs = server_analytic_solution(&demands(), 2.5e9).unwrap();
        assert_eq!(fs, vec![6e8, 9e8, 3e8]);
    }

    #[test]
    fn capacity_violation() {
        let err = server_analytic_solution(&demands(), 1.5e9).unwrap_err();
        assert!(matches!(err, Error::Capacity(Infeasibility::ServerCapacity { .. })));
        assert!(solve_server_dual(&demands(), 1.5e9, &DualOptions::default()).is_err());
    }

    #[test]
    fn warm_start_is_fixed_point() {
        let sol = solve_server_dual(&demands(), 2.5e9, &DualOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(!sol.repaired);
        for (a, b) in sol.server.iter().zip([6e8, 9e8, 3e8]) {
            assert!((a - b).abs() <= 1e-9 * b);
        }
    }

    #[test]
    fn zero_start_reaches_analytic() {
        let opts = DualOptions { init: DualInit::Zero, record_trace: true, ..DualOptions::default() };
        let sol = solve_server_dual(&demands(), 2.5e9, &opts).unwrap();
        let exact = server_analytic_solution(&demands(), 2.5e9).unwrap();
        for (a, b) in sol.server.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-6 * b);
        }
        assert_eq!(sol.trace.len(), sol.iterations + 1);
        assert!((sol.primal_value - sol.dual_value).abs() <= 1e-6 * sol.primal_value);
    }

    #[test]
    fn constant_step_converges() {
        let opts = DualOptions { init: DualInit::Zero, step: StepRule::Constant { scale: 0.5 }, ..Default::default() };
        let sol = solve_server_dual(&demands(), 2.5e9, &opts).unwrap();
        let exact = server_analytic_solution(&demands(), 2.5e9).unwrap();
        for (a, b) in sol.server.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-6 * b);
        }
    }

    #[test]
    fn iteration_cap() {
        let opts = DualOptions {
            init: DualInit::Zero,
            step: StepRule::Constant { scale: 1e-3 },
            max_iter: 5,
            ..Default::default()
        };
        assert!(matches!(solve_server_dual(&demands(), 2.5e9, &opts), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn weak_duality() {
        let d = demands();
        let primal = server_cost(&server_analytic_solution(&d, 2.5e9).unwrap(), &d);
        for nu in [0.0, 0.01, 0.3, 2.0] {
            for scale in [0.0, 0.5, 1.0, 3.0] {
                let state = DualState { nu, mu: d.iter().map(|x| scale * x.k * x.lower).collect() };
                assert!(dual_value(&state, &d, 2.5e9) <= primal * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn subgradient_signs() {
        let d = demands();
        let (g_nu, g_mu) = dual_subgradient(&[1e9, 1e9, 1e9], &d, 2.5e9);
        assert_eq!(g_nu, -0.5e9);
        assert_eq!(g_mu, vec![4e8, 1e8, 7e8]);
    }

    #[test]
    fn zero_curvature_vehicle() {
        let d = vec![ServerDemand { k: 0.0, lower: 0.0 }, ServerDemand { k: 1e-10, lower: 1e9 }];
        let sol = solve_server_dual(&d, 2.5e9, &DualOptions::default()).unwrap();
        assert!(sol.server[0] > 0.0);
        assert!((sol.server[1] - 1e9).abs() <= 1e-9 * 1e9);
    }
}
