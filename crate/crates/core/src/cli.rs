//! The `vemeta` command line: `solve`, `sweep` and `convergence`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 infeasible
//! instance, 3 no convergence within the iteration cap. Results go to files
//! under `--out-dir`; stdout gets a one-line summary, stderr diagnostics.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Error;
use crate::joint::{self, JointOptions, SchemeId, StartRule};
use crate::scenario::{self, ExperimentPlan, SweepAxis};
use crate::server::{self, DualInit};
use crate::vehicle::{self, FormulaVariant, PowerContext};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "VEMETA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "vemeta", version, about = "Joint resource allocation for AR vehicular edge systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one scenario and write report.json and trace.csv.
    Solve {
        config: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        scheme: Option<SchemeId>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cross product of axis values, schemes and seeds into sweep.csv.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        axis: Option<SweepAxis>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<SchemeId>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Fill the wall_ms column (otherwise left empty so reruns are byte-identical).
        #[arg(long)]
        timing: bool,
    },
    /// Per-iteration trace of the power bisection (2), the server dual (3) or
    /// the outer loop (4).
    Convergence {
        config: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
        algorithm: u8,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StartArg {
    Grid,
    Smallest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DualInitArg {
    Warm,
    Zero,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Relative utility change that stops the outer loop.
    #[arg(long, default_value_t = 1e-4)]
    pub xi: f64,
    /// Bracket width that stops the power bisection.
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Relative share change that stops the server dual iteration.
    #[arg(long, default_value_t = 1e-9)]
    pub varsigma: f64,
    #[arg(long, default_value_t = 50)]
    pub max_outer: usize,
    /// Use the alternative closed forms for the size stationary point and the
    /// CPU minimizer.
    #[arg(long, alias = "printed-formulas")]
    pub paper_formula_variants: bool,
    #[arg(long, value_enum, default_value_t = StartArg::Grid)]
    pub starts: StartArg,
    #[arg(long, value_enum, default_value_t = DualInitArg::Warm)]
    pub dual_init: DualInitArg,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

impl SolverArgs {
    pub fn options(&self) -> JointOptions {
        let mut o = JointOptions {
            xi: self.xi,
            max_outer: self.max_outer,
            eps: self.eps,
            variant: if self.paper_formula_variants { FormulaVariant::Printed } else { FormulaVariant::Derivative },
            starts: match self.starts {
                StartArg::Grid => StartRule::Grid,
                StartArg::Smallest => StartRule::Smallest,
            },
            ..JointOptions::default()
        };
        o.dual.tol = self.varsigma;
        o.dual.init = match self.dual_init {
            DualInitArg::Warm => DualInit::Warm,
            DualInitArg::Zero => DualInit::Zero,
        };
        o
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    let result = match &pool {
        Some(p) => p.install(|| dispatch(&cli.command)),
        None => dispatch(&cli.command),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<Error>() {
        Some(err) if err.is_infeasible() => EXIT_INFEASIBLE,
        Some(Error::NotConverged { .. }) => EXIT_NOT_CONVERGED,
        _ => EXIT_USAGE,
    }
}

fn thread_pool() -> anyhow::Result<Option<rayon::ThreadPool>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(None) };
    let n: usize = raw.trim().parse().with_context(|| format!("{THREADS_ENV}={raw} is not a thread count"))?;
    if n == 0 {
        bail!("{THREADS_ENV} must be at least 1");
    }
    Ok(Some(rayon::ThreadPoolBuilder::new().num_threads(n).build()?))
}

fn dispatch(cmd: &Command) -> anyhow::Result<i32> {
    match cmd {
        Command::Solve { config, solver, scheme, seed } => cmd_solve(config, solver, *scheme, *seed),
        Command::Sweep { config, solver, axis, values, schemes, seeds, timing } => {
            cmd_sweep(config, solver, *axis, values, schemes, seeds, *timing)
        }
        Command::Convergence { config, solver, algorithm, seed } => cmd_convergence(config, solver, *algorithm, *seed),
    }
}

fn load(config: &Path) -> anyhow::Result<ExperimentPlan> {
    let (_, plan) = scenario::parse_config(config)?;
    Ok(plan)
}

fn out_dir(solver: &SolverArgs) -> anyhow::Result<&Path> {
    fs::create_dir_all(&solver.out_dir).with_context(|| format!("creating {}", solver.out_dir.display()))?;
    Ok(&solver.out_dir)
}

fn write_csv<S: Serialize>(path: &Path, header: Option<&[String]>, rows: &[S]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(header.is_none()).from_path(path)?;
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct TraceRow {
    iter: usize,
    utility: f64,
    ds: f64,
    #[serde(rename = "dP")]
    d_power: f64,
    df: f64,
    dfs: f64,
}

pub fn cmd_solve(config: &Path, solver: &SolverArgs, scheme: Option<SchemeId>, seed: Option<u64>) -> anyhow::Result<i32> {
    let plan = load(config)?;
    let seed = seed.unwrap_or(plan.seed);
    let scheme = scheme.or(plan.scheme).unwrap_or(SchemeId::Proposed);
    let sc = plan.scenario(seed)?;
    let report = joint::solve_scheme(&sc.config, scheme, &solver.options())?;
    let dir = out_dir(solver)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    let mut rows = vec![TraceRow { iter: 0, utility: report.utility_trace[0], ds: 0.0, d_power: 0.0, df: 0.0, dfs: 0.0 }];
    rows.extend(report.steps.iter().map(|s| TraceRow {
        iter: s.iter,
        utility: s.utility,
        ds: s.ds,
        d_power: s.d_power,
        df: s.df,
        dfs: s.dfs,
    }));
    write_csv(&dir.join("trace.csv"), None, &rows)?;
    println!(
        "scheme={} seed={} utility={} outer_iters={} converged={} audit={}",
        scheme,
        seed,
        report.utility,
        report.outer_iters,
        report.converged,
        if report.audit.passes() { "pass".to_string() } else { report.audit.violations().join(" ") }
    );
    Ok(if report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

/// One row of the sweep CSV. Energies are sums over vehicles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub axis: String,
    pub value: f64,
    pub scheme: SchemeId,
    pub seed: u64,
    pub utility: Option<f64>,
    pub e_cv: Option<f64>,
    pub e_com: Option<f64>,
    pub e_ser: Option<f64>,
    pub outer_iters: Option<usize>,
    pub wall_ms: Option<f64>,
}

/// Runs every `(value, scheme, seed)` combination; rows come back ordered by
/// value, then scheme, then seed. The second element is the exit status.
pub fn run_sweep(
    plan: &ExperimentPlan,
    axis: SweepAxis,
    values: &[f64],
    schemes: &[SchemeId],
    seeds: &[u64],
    opts: &JointOptions,
    timing: bool,
) -> (Vec<ExperimentRecord>, i32) {
    let jobs: Vec<(f64, SchemeId, u64)> = values
        .iter()
        .flat_map(|&v| schemes.iter().flat_map(move |&sch| seeds.iter().map(move |&sd| (v, sch, sd))))
        .collect();
    let results: Vec<(ExperimentRecord, i32)> = jobs
        .par_iter()
        .map(|&(value, scheme, seed)| {
            let start = Instant::now();
            let file = plan.file.with_axis(axis, value);
            let outcome = scenario::generate_scenario(seed, file.defaults.vehicles, &file)
                .and_then(|sc| joint::solve_scheme(&sc.config, scheme, opts));
            let wall_ms = timing.then(|| start.elapsed().as_secs_f64() * 1e3);
            let mut rec = ExperimentRecord {
                axis: axis.to_string(),
                value,
                scheme,
                seed,
                utility: None,
                e_cv: None,
                e_com: None,
                e_ser: None,
                outer_iters: None,
                wall_ms,
            };
            let code = match outcome {
                Ok(r) => {
                    rec.utility = Some(r.utility);
                    rec.e_cv = Some(r.terms.e_cv);
                    rec.e_com = Some(r.terms.e_com);
                    rec.e_ser = Some(r.terms.e_ser);
                    rec.outer_iters = Some(r.outer_iters);
                    if r.converged {
                        EXIT_OK
                    } else {
                        EXIT_NOT_CONVERGED
                    }
                }
                Err(e) => {
                    eprintln!("{axis}={value} scheme={scheme} seed={seed}: {e}");
                    if e.is_infeasible() {
                        EXIT_INFEASIBLE
                    } else if matches!(e, Error::NotConverged { .. }) {
                        EXIT_NOT_CONVERGED
                    } else {
                        EXIT_USAGE
                    }
                }
            };
            (rec, code)
        })
        .collect();
    let code = results.iter().map(|(_, c)| *c).fold(EXIT_OK, |a, c| if a == EXIT_OK { c } else { a });
    (results.into_iter().map(|(r, _)| r).collect(), code)
}

pub const SWEEP_HEADER: [&str; 10] =
    ["axis", "value", "scheme", "seed", "utility", "e_cv", "e_com", "e_ser", "outer_iters", "wall_ms"];

fn cmd_sweep(
    config: &Path,
    solver: &SolverArgs,
    axis: Option<SweepAxis>,
    values: &[f64],
    schemes: &[SchemeId],
    seeds: &[u64],
    timing: bool,
) -> anyhow::Result<i32> {
    let plan = load(config)?;
    let (axis, values) = match (axis, plan.sweep.as_ref()) {
        (Some(a), _) if !values.is_empty() => (a, values.to_vec()),
        (Some(a), Some(s)) if s.axis == a => (a, s.values.clone()),
        (None, Some(s)) if values.is_empty() => (s.axis, s.values.clone()),
        (None, Some(s)) => (s.axis, values.to_vec()),
        _ => bail!("no sweep: give --axis and --values or a `sweep` section in the config"),
    };
    let schemes = if schemes.is_empty() {
        plan.scheme.map(|s| vec![s]).unwrap_or_else(|| SchemeId::ALL.to_vec())
    } else {
        schemes.to_vec()
    };
    let seeds = if seeds.is_empty() { vec![plan.seed] } else { seeds.to_vec() };
    let (rows, code) = run_sweep(&plan, axis, &values, &schemes, &seeds, &solver.options(), timing);
    let dir = out_dir(solver)?;
    let path = dir.join("sweep.csv");
    let header: Vec<String> = SWEEP_HEADER.iter().map(|s| s.to_string()).collect();
    write_csv(&path, Some(&header), &rows)?;
    println!("axis={} points={} schemes={} seeds={} rows={} out={}", axis, values.len(), schemes.len(), seeds.len(), rows.len(), path.display());
    Ok(code)
}

#[derive(Debug, Serialize)]
struct BisectionRow {
    iter: usize,
    t_lower: f64,
    t_upper: f64,
}

fn cmd_convergence(config: &Path, solver: &SolverArgs, algorithm: u8, seed: Option<u64>) -> anyhow::Result<i32> {
    let plan = load(config)?;
    let seed = seed.unwrap_or(plan.seed);
    let sc = plan.scenario(seed)?;
    let cfg = &sc.config;
    let opts = solver.options();
    let report = joint::joint_solve(cfg, &opts)?;
    let alloc = &report.allocation;
    let dir = out_dir(solver)?;
    let path = dir.join(format!("convergence_alg{algorithm}.csv"));
    match algorithm {
        2 => {
            let v = &cfg.vehicles[0];
            let bracket = vehicle::power_lower_bound(v, cfg, alloc.size[0], alloc.server[0], alloc.f[0])
                .map_err(|reason| Error::Infeasible { vehicle: 0, reason })?;
            let ctx = PowerContext::new(v, cfg, alloc.size[0]);
            let sol = vehicle::solve_power_bisection(&bracket, &ctx, opts.eps, opts.power_max_iter)?;
            let mut rows = vec![BisectionRow { iter: 0, t_lower: 0.0, t_upper: ctx.energy(bracket.p_max.max(bracket.lower())) }];
            rows.extend(sol.trace.iter().enumerate().map(|(i, &(t_lower, t_upper))| BisectionRow { iter: i + 1, t_lower, t_upper }));
            write_csv(&path, None, &rows)?;
            println!("algorithm=2 vehicle=0 iterations={} power={} out={}", sol.iterations, sol.power, path.display());
        }
        3 => {
            let demands = server::server_demands(alloc, cfg)?;
            let mut dual = opts.dual;
            dual.record_trace = true;
            let sol = server::solve_server_dual(&demands, cfg.server_capacity, &dual)?;
            let picked = sample_vehicles(cfg.n(), 4, seed);
            let mut header = vec!["iter".to_string(), "nu".to_string()];
            header.extend(picked.iter().map(|i| format!("mu_{i}")));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(&header)?;
            for p in &sol.trace {
                let mut rec = vec![p.iter.to_string(), p.nu.to_string()];
                rec.extend(picked.iter().map(|&i| p.mu[i].to_string()));
                w.write_record(&rec)?;
            }
            w.flush()?;
            println!("algorithm=3 vehicles={picked:?} iterations={} out={}", sol.iterations, path.display());
        }
        4 => {
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["iter", "utility"])?;
            for (i, u) in report.utility_trace.iter().enumerate() {
                w.write_record([i.to_string(), u.to_string()])?;
            }
            w.flush()?;
            println!("algorithm=4 outer_iters={} utility={} out={}", report.outer_iters, report.utility, path.display());
        }
        _ => unreachable!("clap restricts --algorithm to 2..=4"),
    }
    Ok(if report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

/// `k` distinct vehicle indices drawn from `seed`, ascending.
pub fn sample_vehicles(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec();
    picked.sort_unstable();
    picked
}
