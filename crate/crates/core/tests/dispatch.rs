use std::time::Instant;

use gridsync_core::controller::CostFunction;
use gridsync_core::dispatch::{reference_units, solve_sfc, Binding, DispatchProblem, Limits};
use proptest::prelude::*;

fn problem(demand: f64) -> DispatchProblem {
    let (c, l) = reference_units();
    DispatchProblem::new(c, l, demand).unwrap()
}

/// Scans a uniform λ grid and keeps the point whose total response is
/// closest to demand. Returns the generations and the grid spacing.
fn grid_oracle(p: &DispatchProblem, points: usize) -> (Vec<f64>, f64) {
    let marg = |f: fn(&Limits) -> f64| -> Vec<f64> {
        p.costs().iter().zip(p.limits()).map(|(c, l)| c.marginal(f(l))).collect::<Vec<_>>()
    };
    let lo = -marg(|l| l.p_max).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let hi = -marg(|l| l.p_min).into_iter().fold(f64::INFINITY, f64::min);
    let step = (hi - lo) / (points - 1) as f64;
    let mut best = (f64::INFINITY, lo);
    for k in 0..points {
        let lambda = lo + k as f64 * step;
        let total: f64 =
            p.costs().iter().zip(p.limits()).map(|(c, l)| ((-lambda - c.b) / c.a).clamp(l.p_min, l.p_max)).sum();
        let gap = (total - p.demand()).abs();
        if gap < best.0 {
            best = (gap, lambda);
        }
    }
    (p.response(best.1), step)
}

fn instance() -> impl Strategy<Value = DispatchProblem> {
    prop::collection::vec((0.01f64..2.0, -1.0f64..1.0, 0.0f64..2.0, 0.1f64..5.0), 2..6).prop_flat_map(|units| {
        let lo: f64 = units.iter().map(|u| u.2).sum();
        let hi: f64 = units.iter().map(|u| u.2 + u.3).sum();
        (Just(units), lo..=hi).prop_map(|(units, demand)| {
            let costs = units.iter().map(|u| CostFunction::new(u.0, u.1).unwrap()).collect();
            let limits = units.iter().map(|u| Limits { p_min: u.2, p_max: u.2 + u.3 }).collect();
            DispatchProblem::new(costs, limits, demand).unwrap()
        })
    })
}

#[test]
fn stage_one_generations() {
    let start = Instant::now();
    let s = solve_sfc(&problem(3414.0));
    let elapsed = start.elapsed();
    for (p, want) in s.pg.iter().zip([927.0, 610.0, 834.0, 1043.0]) {
        assert!((p - want).abs() <= 2.0, "{:?}", s.pg);
    }
    let (c, _) = reference_units();
    let f: Vec<f64> = c.iter().zip(&s.pg).map(|(c, &p)| c.marginal(p)).collect();
    for x in &f {
        assert!((x - f[0]).abs() < 1e-6, "{f:?}");
    }
    assert!((f[0] - 0.1154).abs() < 1e-4, "{}", f[0]);
    assert!(elapsed.as_secs_f64() < 1.0);
}

#[test]
fn stage_two_binds_exactly_g38_and_g39() {
    let s = solve_sfc(&problem(968.0 + 652.0 + 850.0 + 1080.0));
    assert_eq!(s.binding, vec![(2, Binding::Upper), (3, Binding::Upper)]);
    assert_eq!(s.pg[2], 850.0);
    assert_eq!(s.pg[3], 1080.0);
}

#[test]
fn reference_units_match_a_million_point_grid() {
    let p = problem(3414.0);
    let s = solve_sfc(&p);
    let (g, step) = grid_oracle(&p, 1_000_000);
    let a_min = p.costs().iter().map(|c| c.a).fold(f64::INFINITY, f64::min);
    for (x, y) in s.pg.iter().zip(&g) {
        assert!((x - y).abs() <= step / a_min, "{x} vs {y}, spacing {}", step / a_min);
    }
}

#[test]
fn solution_is_insensitive_to_unit_order() {
    let (c, l) = reference_units();
    let forward = solve_sfc(&DispatchProblem::new(c.clone(), l.clone(), 3414.0).unwrap());
    let rev = |v: &[f64]| v.iter().rev().cloned().collect::<Vec<f64>>();
    let backward =
        solve_sfc(&DispatchProblem::new(c.into_iter().rev().collect(), l.into_iter().rev().collect(), 3414.0).unwrap());
    assert!((forward.lambda - backward.lambda).abs() < 1e-12);
    for (x, y) in forward.pg.iter().zip(rev(&backward.pg)) {
        assert!((x - y).abs() < 1e-8);
    }
    assert!(backward.kkt_residual < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bisection_agrees_with_grid_search(p in instance()) {
        let s = solve_sfc(&p);
        let (g, step) = grid_oracle(&p, 1_000_000);
        let a_min = p.costs().iter().map(|c| c.a).fold(f64::INFINITY, f64::min);
        for (x, y) in s.pg.iter().zip(&g) {
            prop_assert!((x - y).abs() <= step / a_min + 1e-9, "{x} vs {y}");
        }
    }
}

proptest! {
    #[test]
    fn solution_postconditions(p in instance()) {
        let s = solve_sfc(&p);
        let total: f64 = s.pg.iter().sum();
        prop_assert!((total - p.demand()).abs() < 1e-9 * p.demand().max(1.0));
        for (x, l) in s.pg.iter().zip(p.limits()) {
            prop_assert!(l.p_min <= *x && *x <= l.p_max);
        }
        prop_assert!(s.kkt_residual < 1e-9, "{}", s.kkt_residual);
    }

    #[test]
    fn interior_units_share_one_marginal_cost(p in instance()) {
        let s = solve_sfc(&p);
        let interior: Vec<f64> = s
            .pg
            .iter()
            .zip(p.costs().iter().zip(p.limits()))
            .filter(|(x, (_, l))| l.p_min < **x && **x < l.p_max)
            .map(|(x, (c, _))| c.marginal(*x))
            .collect();
        for f in &interior {
            prop_assert!((f - interior[0]).abs() < 1e-8, "{interior:?}");
        }
    }

    #[test]
    fn more_demand_never_lowers_any_unit(p in instance(), frac in 0.0f64..1.0) {
        let hi: f64 = p.limits().iter().map(|l| l.p_max).sum();
        let more = p.demand() + frac * (hi - p.demand());
        let q = DispatchProblem::new(p.costs().to_vec(), p.limits().to_vec(), more).unwrap();
        let (a, b) = (solve_sfc(&p), solve_sfc(&q));
        for (x, y) in a.pg.iter().zip(&b.pg) {
            prop_assert!(*y >= *x - 1e-9, "{:?} -> {:?}", a.pg, b.pg);
        }
    }
}
