mod common;

use gridsync_core::controller::{
    beta_bound, estimator_block, mu_dynamics_measured, mu_dynamics_oracle, ControllerGains, ControllerState,
    CostFunction, NeighborView, Variant,
};
use gridsync_core::engine::step;
use gridsync_core::scenario::{run_scenario, RunOutcome, Scenario};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

fn gains() -> ControllerGains {
    ControllerGains { k_pg: 1.0, k_mu: 2.5, k_z: 1.0, k_gamma: 1.0, tau: 1.0 }
}

/// Neighbor views of node `i` on a ring with one z per edge (i, i+1),
/// owned by the lower endpoint in ring order.
fn ring_views(mus: &[f64], z: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = mus.len();
    (0..n)
        .map(|i| {
            let next = (i + 1) % n;
            let prev = (i + n - 1) % n;
            (vec![mus[next], mus[prev]], vec![z[i], -z[prev]])
        })
        .collect()
}

proptest! {
    #[test]
    fn consensus_terms_cancel_in_the_multiplier_sum(
        mus in prop::collection::vec(-2.0f64..2.0, 5),
        z in prop::collection::vec(-1.0f64..1.0, 5),
        pg in prop::collection::vec(0.0f64..5.0, 5),
        p_hat in prop::collection::vec(0.0f64..5.0, 5),
    ) {
        let g = gains();
        let views = ring_views(&mus, &z);
        let mut sum = 0.0;
        for i in 0..5 {
            let s = ControllerState { mu: mus[i], p_hat: p_hat[i], ..Default::default() };
            let view = NeighborView { neighbor_mus: &views[i].0, incident_z: &views[i].1 };
            sum += mu_dynamics_oracle(&g, &s, pg[i], view) / g.k_mu;
        }
        let expected: f64 = pg.iter().zip(&p_hat).map(|(p, h)| p - h).sum();
        prop_assert!((sum - expected).abs() < 1e-12, "{sum} vs {expected}");
    }

    #[test]
    fn tau_channel_pulls_mu_toward_negative_marginal_cost(mu in -3.0f64..3.0, pg in 0.0f64..4.0) {
        let cost = CostFunction::new(0.7, 0.2).unwrap();
        let s = ControllerState { mu, ..Default::default() };
        let view = NeighborView { neighbor_mus: &[], incident_z: &[] };
        let rate = mu_dynamics_measured(&gains(), &cost, &s, 1.0, 1.0, 0.0, 0.0, pg, view);
        let target = -cost.marginal(pg);
        prop_assert!(rate * (mu - target) <= 0.0);
    }
}

#[test]
fn two_node_consensus_signs() {
    let g = gains();
    let (a, b) = (0.7, 0.2);
    let s1 = ControllerState { mu: a, ..Default::default() };
    let s2 = ControllerState { mu: b, ..Default::default() };
    let r1 = mu_dynamics_oracle(&g, &s1, 0.0, NeighborView { neighbor_mus: &[b], incident_z: &[0.0] });
    let r2 = mu_dynamics_oracle(&g, &s2, 0.0, NeighborView { neighbor_mus: &[a], incident_z: &[0.0] });
    assert!(r1 < 0.0 && r2 > 0.0);
}

fn max_eigenvalue(m: nalgebra::Matrix3<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.max()
}

#[test]
fn schur_block_changes_definiteness_at_the_beta_bound() {
    for &l in &[0.05, 0.5, 1.0, 4.0, 30.0] {
        for &d in &[0.1, 1.0, 10.0] {
            for frac in [0.05, 0.3, 0.5, 0.75, 0.95] {
                let tau = frac * 4.0 / l;
                let bound = beta_bound(tau, d, l).unwrap();
                for sign in [-1.0, 1.0] {
                    let inside = max_eigenvalue(estimator_block(tau, d, l, sign * 0.99 * bound));
                    let outside = max_eigenvalue(estimator_block(tau, d, l, sign * 1.01 * bound));
                    assert!(inside < 0.0, "l={l} d={d} tau={tau}: {inside}");
                    assert!(outside > 0.0, "l={l} d={d} tau={tau}: {outside}");
                }
            }
        }
    }
}

#[test]
fn recommended_tau_gives_closed_form_bound() {
    for &l in &[0.05, 0.5, 1.0, 4.0, 30.0] {
        for &d in &[0.1, 1.0, 10.0] {
            let b = beta_bound(3.0 / l, d, l).unwrap();
            let closed = (3.0 * d / l).sqrt();
            assert!((b - closed).abs() <= 4.0 * f64::EPSILON * closed, "{b} vs {closed}");
        }
    }
    assert!(beta_bound(4.0, 1.0, 1.0).is_err());
    assert!(beta_bound(0.0, 1.0, 1.0).is_err());
}

fn run(variant: Variant) -> (Scenario, RunOutcome) {
    let mut f = common::small_file();
    f.controller.variant = variant;
    let s = Scenario::build(f).unwrap();
    let o = run_scenario(&s).unwrap();
    (s, o)
}

fn steady_marginal_costs(s: &Scenario, o: &RunOutcome) -> Vec<f64> {
    let last = &o.trajectory.last().state;
    s.system.units.iter().map(|u| u.cost.marginal(last.machines[u.machine].pg)).collect()
}

#[test]
fn closed_loop_equalizes_marginal_costs() {
    for variant in [Variant::Oracle, Variant::Measured] {
        let (s, o) = run(variant);
        let f = steady_marginal_costs(&s, &o);
        assert!((f[0] - f[1]).abs() < 1e-6, "{variant}: {f:?}");
        assert!(o.steady.converged, "{variant}");
        assert!(o.steady.mu_spread < 1e-8, "{variant}: spread {}", o.steady.mu_spread);
    }
}

#[test]
fn agc_leaves_marginal_costs_unequal() {
    let (s, o) = run(Variant::Agc);
    let f = steady_marginal_costs(&s, &o);
    assert!(o.steady.max_omega < 1e-3);
    assert!((f[0] - f[1]).abs() > 1e-2 * f[0].abs(), "{f:?}");
}

#[test]
fn variants_reach_the_same_steady_state() {
    let (_, a) = run(Variant::Oracle);
    let (_, b) = run(Variant::Measured);
    let (a, b) = (&a.steady.equilibrium, &b.steady.equilibrium);
    for (x, y) in a.machines.iter().zip(&b.machines) {
        assert!((x.pg - y.pg).abs() < 1e-6, "{} vs {}", x.pg, y.pg);
    }
}

#[test]
fn limit_multipliers_stay_nonnegative_from_zero() {
    let mut f = common::small_file();
    // Unit at bus 3 would take 40 MW unconstrained; cap it below that.
    f.controller.costs[1].p_max_mw = 30.0;
    f.controller.variant = Variant::Measured;
    let s = Scenario::build(f).unwrap();
    let o = run_scenario(&s).unwrap();
    let mut saw_active = false;
    for r in &o.trajectory.records {
        for c in &r.state.controllers {
            assert!(c.gamma_minus >= 0.0 && c.gamma_plus >= 0.0, "t={}: {c:?}", r.state.time);
            saw_active |= c.gamma_plus > 0.0;
        }
    }
    assert!(saw_active);

    // A unit sitting slightly inside both limits, multipliers at zero:
    // every step must keep them at zero, never below.
    let mut st = s.initial.clone();
    for c in &mut st.controllers {
        c.gamma_minus = 0.0;
        c.gamma_plus = 0.0;
    }
    for _ in 0..2000 {
        st = step(&s.system, &st, s.settings.dt).unwrap();
        for c in &st.controllers {
            assert!(c.gamma_minus >= 0.0 && c.gamma_plus >= 0.0);
        }
    }
}
