mod common;

use common::{direct, random_grid, random_profile};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vemeta::model::ScenarioConfig;
use vemeta::vehicle::{
    power_lower_bound, size_bounds, size_objective, solve_cpu, solve_power_bisection, solve_size, solve_size_continuous,
    solve_size_discrete, FormulaVariant, PowerContext, SizeContext,
};
use vemeta::verify::{grid_argopt, Direction, GridSpec};
use vemeta::{Infeasibility, VehicleProfile};

struct Case {
    v: VehicleProfile,
    cfg: ScenarioConfig,
    p: f64,
    fs: f64,
    f: f64,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let v = random_profile(rng);
    let m = rng.random_range(3..=64);
    let grid = random_grid(rng, m, 20.0, 2000.0);
    let mut cfg = common::config(vec![v], grid);
    cfg.window = rng.random_range(0.3..2.0);
    cfg.kappa_ser = common::log_uniform(rng, 1e-28, 1e-26);
    Case {
        v,
        p: common::log_uniform(rng, 1e-6, v.p_max),
        fs: common::log_uniform(rng, 1e7, 2e9),
        f: rng.random_range(v.f_min..=v.f_max),
        cfg,
    }
}

#[test]
fn size_bounds_match_direct_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let c = random_case(&mut rng);
        let ctx = SizeContext::new(&c.v, &c.cfg, c.p, c.fs).unwrap();
        let b = size_bounds(&ctx, &c.v, &c.cfg, c.f);
        let (lo, hi) = direct::size_interval(&c.v, &c.cfg, c.p, c.fs, c.f);
        assert!((b.lower - lo).abs() <= 1e-9 * lo);
        assert!((b.upper - hi).abs() <= 1e-9 * hi.max(1.0));
    }
}

#[test]
fn size_continuous_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    while checked < 60 {
        let c = random_case(&mut rng);
        let ctx = SizeContext::new(&c.v, &c.cfg, c.p, c.fs).unwrap();
        let b = size_bounds(&ctx, &c.v, &c.cfg, c.f);
        let Ok(s) = solve_size_continuous(&ctx, &b, FormulaVariant::Derivative) else { continue };
        if b.upper <= b.lower {
            continue;
        }
        checked += 1;
        let obj = |x: f64| direct::size_objective(x, &c.v, &c.cfg, c.p, c.fs);
        let (_, best) = grid_argopt(obj, &GridSpec::linear(b.lower, b.upper, 20_000), Direction::Max);
        let ours = obj(s);
        assert!(ours >= best - 1e-6 * best.abs().max(1e-12), "ours {ours} oracle {best}");
    }
}

#[test]
fn size_discrete_is_grid_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 300 {
        let c = random_case(&mut rng);
        let Ok(Ok(sol)) = solve_size(&c.v, &c.cfg, c.f, c.p, c.fs, FormulaVariant::Derivative) else { continue };
        checked += 1;
        let (lo, hi) = direct::size_interval(&c.v, &c.cfg, c.p, c.fs, c.f);
        let obj = |x: f64| direct::size_objective(x, &c.v, &c.cfg, c.p, c.fs);
        let best = c
            .cfg
            .size_grid
            .iter()
            .copied()
            .filter(|&s| s >= lo * (1.0 - 1e-9) && s <= hi * (1.0 + 1e-9))
            .map(obj)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(obj(sol.discrete) >= best - 1e-12 * best.abs(), "{} vs {best}", obj(sol.discrete));
    }
}

#[test]
fn size_window_infeasible_reports_reason() {
    let v = common::profile();
    let cfg = common::config(vec![v], vec![100.0, 200.0]);
    // accuracy needs s >= 362 but the grid stops at 200
    let r = solve_size(&v, &cfg, 1e9, 1.0, 1e9, FormulaVariant::Derivative).unwrap();
    assert!(matches!(r, Err(Infeasibility::SizeWindow { .. })));
    let cfg = common::config(vec![v], vec![100.0, 300.0, 400.0, 500.0]);
    let mut tight = v;
    tight.delta = 0.8;
    // window [~300, ~...] narrowed below the next grid point by a slow server
    let r = solve_size(&tight, &cfg, 1e9, 1.0, 1.2e7, FormulaVariant::Derivative).unwrap();
    assert!(r.is_err());
}

#[test]
fn printed_variant_changes_size_only_through_stationary_point() {
    let v = common::profile();
    let cfg = common::config(vec![v], (5..=40).map(|k| 20.0 * k as f64).collect());
    let a = solve_size(&v, &cfg, 0.5e9, 1e-3, 8e7, FormulaVariant::Derivative).unwrap().unwrap();
    let b = solve_size(&v, &cfg, 0.5e9, 1e-3, 8e7, FormulaVariant::Printed).unwrap().unwrap();
    assert_eq!(a.bounds, b.bounds);
}

#[test]
fn power_returns_latency_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut checked = 0;
    while checked < 300 {
        let c = random_case(&mut rng);
        let s = rng.random_range(50.0..1200.0);
        let Ok(bracket) = power_lower_bound(&c.v, &c.cfg, s, c.fs, c.f) else { continue };
        checked += 1;
        let ctx = PowerContext::new(&c.v, &c.cfg, s);
        let sol = solve_power_bisection(&bracket, &ctx, 1e-8, 200).unwrap();
        assert!(sol.power >= bracket.lower() && sol.power <= c.v.p_max * (1.0 + 1e-9));
        let best = direct::upload_energy(bracket.lower(), s, &c.v, &c.cfg);
        assert!(direct::upload_energy(sol.power, s, &c.v, &c.cfg) - best <= 1e-8);
        // the bound makes the latency tight
        let r = direct::rate(bracket.q, &c.v, c.cfg.noise_density);
        let bits = c.cfg.bits_per_pixel * s * s;
        let lat = bits / r + bits * c.v.cycles_per_bit / c.fs + c.v.workload / c.f;
        if bracket.q > 1e-10 {
            assert!((lat - c.cfg.window).abs() <= 1e-9 * c.cfg.window, "latency {lat}");
        }
    }
}

#[test]
fn power_bound_errors() {
    let v = common::profile();
    let cfg = common::config(vec![v], vec![400.0]);
    assert!(matches!(
        power_lower_bound(&v, &cfg, 400.0, 1e6, 0.5e9),
        Err(Infeasibility::NoLatencyBudget { .. })
    ));
    let mut weak = v;
    weak.gain = 1e-16;
    assert!(matches!(
        power_lower_bound(&weak, &cfg, 400.0, 1e9, 0.5e9),
        Err(Infeasibility::PowerBound { .. })
    ));
}

#[test]
fn cpu_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut checked = 0;
    while checked < 200 {
        let c = random_case(&mut rng);
        let s = rng.random_range(50.0..1200.0);
        let Ok(Ok(sol)) = solve_cpu(&c.v, &c.cfg, s, c.p, c.fs, FormulaVariant::Derivative) else { continue };
        checked += 1;
        let bits = c.cfg.bits_per_pixel * s * s;
        let tau = c.cfg.window - bits / direct::rate(c.p, &c.v, c.cfg.noise_density) - bits * c.v.cycles_per_bit / c.fs;
        let floor = (c.v.workload / tau).max(c.v.f_min);
        let upper = c.v.f_max.max(floor);
        let e = |f: f64| direct::conversion_energy(f, &c.v);
        let best = if upper > floor {
            grid_argopt(e, &GridSpec::linear(floor, upper, 20_000), Direction::Min).1
        } else {
            e(floor)
        };
        assert!(e(sol.f) <= best * (1.0 + 1e-6), "{} vs {best}", e(sol.f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn continuous_size_stays_in_window(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_case(&mut rng);
        let ctx = SizeContext::new(&c.v, &c.cfg, c.p, c.fs).unwrap();
        let b = size_bounds(&ctx, &c.v, &c.cfg, c.f);
        if let Ok(s) = solve_size_continuous(&ctx, &b, FormulaVariant::Derivative) {
            prop_assert!(s >= b.lower && s <= b.upper.max(b.lower));
            let probe = rng.random_range(b.lower..=b.upper.max(b.lower));
            prop_assert!(size_objective(s, &ctx) >= size_objective(probe, &ctx) - 1e-12 * size_objective(s, &ctx).abs());
        }
    }

    #[test]
    fn discrete_size_is_on_grid_and_feasible(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_case(&mut rng);
        if let Ok(Ok(sol)) = solve_size(&c.v, &c.cfg, c.f, c.p, c.fs, FormulaVariant::Derivative) {
            prop_assert!(c.cfg.size_grid.contains(&sol.discrete));
            prop_assert!(sol.discrete >= sol.bounds.lower * (1.0 - 1e-9));
            prop_assert!(sol.discrete <= sol.bounds.upper * (1.0 + 1e-9));
        }
    }

    #[test]
    fn power_no_worse_than_any_bracket_point(seed in any::<u64>(), u in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_case(&mut rng);
        let s = rng.random_range(50.0..1200.0);
        if let Ok(bracket) = power_lower_bound(&c.v, &c.cfg, s, c.fs, c.f) {
            let ctx = PowerContext::new(&c.v, &c.cfg, s);
            let sol = solve_power_bisection(&bracket, &ctx, 1e-8, 200).unwrap();
            let other = bracket.lower() + u * (bracket.p_max - bracket.lower()).max(0.0);
            prop_assert!(sol.energy <= ctx.energy(other) + 1e-8);
        }
    }

    #[test]
    fn cpu_within_limits(seed in any::<u64>(), u in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_case(&mut rng);
        let s = rng.random_range(50.0..1200.0);
        if let Ok(Ok(sol)) = solve_cpu(&c.v, &c.cfg, s, c.p, c.fs, FormulaVariant::Derivative) {
            prop_assert!(sol.f >= sol.floor && sol.f <= c.v.f_max.max(sol.floor));
            let probe = sol.floor + u * (c.v.f_max - sol.floor).max(0.0);
            prop_assert!(direct::conversion_energy(sol.f, &c.v) <= direct::conversion_energy(probe, &c.v) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn discrete_binary_search_matches_scan(seed in any::<u64>(), target in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..=64);
        let grid = random_grid(&mut rng, m, 10.0, 1000.0);
        let peak = 10.0 + target * 990.0;
        let obj = |s: f64| -(s - peak).powi(2);
        let b = vemeta::vehicle::SizeBounds { eps1: 0.0, eps2: 1e9, lower: 0.0, upper: 1e9, feasible: true };
        let got = solve_size_discrete(peak, &grid, &b, obj).unwrap();
        let best = grid.iter().copied().map(obj).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(obj(got) >= best);
    }
}
