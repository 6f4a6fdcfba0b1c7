mod common;

use gridsync_core::engine::{
    a4_matrix, apply_event, detect_steady_state, evaluate_stage, hessian_check_a4, lyapunov_value, potential,
    potential_gradient, run, step, Event, EventKind, HessianVariable, Record, System, SystemState, Trajectory,
};
use gridsync_core::network::check_connectivity;
use gridsync_core::scenario::{load_bundled, run_scenario, Scenario};
use gridsync_core::{Graph, SimError};

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Small scenario with its load step applied at t = 0.
fn disturbed() -> (Scenario, System, SystemState) {
    let s = common::small();
    let ev = Event { at: 0.0, kind: s.events[0].kind.clone() };
    let (sys, st) = apply_event(&s.system, &s.initial, &ev).unwrap();
    (s, sys, st)
}

fn integrate(sys: &System, state: &SystemState, dt: f64, t: f64) -> SystemState {
    let n = (t / dt).round() as usize;
    let mut s = state.clone();
    for _ in 0..n {
        s = step(sys, &s, dt).unwrap();
    }
    s
}

#[test]
fn equilibrium_is_a_fixed_point_of_the_step() {
    let s = common::small();
    let next = step(&s.system, &s.initial, s.settings.dt).unwrap();
    let d = max_diff(&next.differential(), &s.initial.differential());
    assert!(d < 1e-12, "{d:e}");
}

#[test]
fn observed_order_is_four() {
    // A load step alone barely excites the fast modes; at the default Newton
    // tolerance the truncation error then hides under solver noise.
    let (_, mut sys, mut st) = disturbed();
    sys.voltage.tol_q = 1e-13;
    for (k, m) in st.machines.iter_mut().enumerate() {
        m.omega += 0.2 * (k as f64 - 1.0);
        m.eq_p += 0.03;
    }
    let x: Vec<Vec<f64>> =
        [0.008, 0.004, 0.002].iter().map(|&dt| integrate(&sys, &st, dt, 1.0).differential()).collect();
    let order = (max_diff(&x[0], &x[1]) / max_diff(&x[1], &x[2])).log2();
    assert!(order >= 3.5, "observed order {order}");
}

#[test]
fn load_step_run_matches_a_tenfold_finer_reference() {
    let s = common::small();
    let mut settings = s.settings;
    settings.t_end = 5.0;
    let coarse = run(s.system.clone(), s.initial.clone(), &s.events, &settings).unwrap();
    settings.dt /= 10.0;
    let fine = run(s.system.clone(), s.initial.clone(), &s.events, &settings).unwrap();
    let (a, b) = (&coarse.last().state, &fine.last().state);
    assert!((a.time - b.time).abs() < 1e-12);
    let d = max_diff(&a.differential(), &b.differential());
    assert!(d < 1e-5, "{d:e}");
}

#[test]
fn runs_are_bitwise_deterministic() {
    let s = common::small();
    let mut settings = s.settings;
    settings.t_end = 10.0;
    let a = run(s.system.clone(), s.initial.clone(), &s.events, &settings).unwrap();
    let b = run(s.system.clone(), s.initial.clone(), &s.events, &settings).unwrap();
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x, y);
    }
}

#[test]
fn angle_differences_advance_at_the_slip_rate() {
    let (s, sys, st) = disturbed();
    let mut settings = s.settings;
    settings.t_end = 3.0;
    settings.dt = 5e-4;
    settings.record_every = settings.dt;
    let traj = run(sys.clone(), st, &[], &settings).unwrap();
    let h = 2.0 * settings.dt;
    let mut worst: f64 = 0.0;
    for w in traj.records.windows(3) {
        let (a, b, c) = (&w[0].state, &w[1].state, &w[2].state);
        for (g, gen) in sys.generators.iter().enumerate() {
            let eta = |s: &SystemState| s.machines[g].delta - s.alg.theta[gen.bus];
            let fd = (eta(c) - eta(a)) / h;
            let slip = b.machines[g].omega - b.alg.omega_tilde[gen.bus];
            worst = worst.max((fd - slip).abs());
        }
    }
    assert!(worst < 1e-5, "{worst:e}");
}

#[test]
fn lyapunov_vanishes_at_equilibrium_and_sees_kinetic_energy() {
    let s = common::small();
    let eq = &s.initial;
    let w = lyapunov_value(&s.system, eq, eq);
    assert!(w.total.abs() < 1e-14, "{w:?}");
    let mut st = eq.clone();
    st.machines[1].omega += 0.01;
    let w = lyapunov_value(&s.system, &st, eq);
    let m = s.system.generators[1].params.m;
    assert!((w.total - 0.5 * m * 1e-4).abs() < 1e-15, "{w:?}");
}

#[test]
fn potential_gradient_matches_central_differences() {
    let (_, sys, mut st) = disturbed();
    st.alg.theta[3] -= 0.05;
    st.alg.v[2] *= 0.97;
    st.machines[0].eq_p += 0.02;
    let g = potential_gradient(&sys, &st);
    let h = 1e-6;
    let fd = |f: &dyn Fn(&mut SystemState, f64)| {
        let (mut a, mut b) = (st.clone(), st.clone());
        f(&mut a, h);
        f(&mut b, -h);
        (potential(&sys, &a) - potential(&sys, &b)) / (2.0 * h)
    };
    for k in 0..sys.generators.len() {
        let d = fd(&|s: &mut SystemState, e| s.machines[k].eq_p += e);
        assert!((d - g.eq_p[k]).abs() < 1e-6, "eq_p[{k}]: {d} vs {}", g.eq_p[k]);
        let d = fd(&|s: &mut SystemState, e| s.machines[k].delta += e);
        assert!((d - g.delta[k]).abs() < 1e-6, "delta[{k}]: {d} vs {}", g.delta[k]);
    }
    for i in 0..sys.net.n_buses() {
        let d = fd(&|s: &mut SystemState, e| s.alg.v[i] += e);
        assert!((d - g.v[i]).abs() < 1e-6, "v[{i}]: {d} vs {}", g.v[i]);
        let d = fd(&|s: &mut SystemState, e| s.alg.theta[i] += e);
        assert!((d - g.theta[i]).abs() < 1e-6, "theta[{i}]: {d} vs {}", g.theta[i]);
    }
}

/// The small grid with its closing line removed: a chain 1-2-3-4 whose line
/// angles are independent coordinates.
fn chain() -> Scenario {
    let mut f = common::small_file();
    f.network.lines.pop();
    Scenario::build(f).unwrap()
}

/// Applies the Hessian's coordinates to a state on the chain: line angles
/// fix θ down the chain from bus 0, machine angles fix δ.
fn set_coordinates(sys: &System, base: &SystemState, vars: &[HessianVariable], x: &[f64]) -> SystemState {
    let mut s = base.clone();
    let mut eta = vec![0.0; sys.net.lines().len()];
    for (var, &v) in vars.iter().zip(x) {
        match *var {
            HessianVariable::LineAngle(k) => eta[k] = v,
            HessianVariable::Emf(g) => s.machines[g].eq_p = v,
            HessianVariable::Voltage(i) => s.alg.v[i] = v,
            HessianVariable::MachineAngle(_) => {}
        }
    }
    for (k, l) in sys.net.lines().iter().enumerate() {
        s.alg.theta[l.to] = s.alg.theta[l.from] - eta[k];
    }
    for (var, &v) in vars.iter().zip(x) {
        if let HessianVariable::MachineAngle(g) = *var {
            s.machines[g].delta = s.alg.theta[sys.generators[g].bus] + v;
        }
    }
    s
}

fn coordinates(sys: &System, s: &SystemState, vars: &[HessianVariable]) -> Vec<f64> {
    vars.iter()
        .map(|var| match *var {
            HessianVariable::LineAngle(k) => {
                let l = &sys.net.lines()[k];
                s.alg.theta[l.from] - s.alg.theta[l.to]
            }
            HessianVariable::MachineAngle(g) => s.machines[g].delta - s.alg.theta[sys.generators[g].bus],
            HessianVariable::Emf(g) => s.machines[g].eq_p,
            HessianVariable::Voltage(i) => s.alg.v[i],
        })
        .collect()
}

#[test]
fn hessian_matches_second_differences_on_a_tree() {
    let sc = chain();
    let sys = &sc.system;
    let st = &sc.initial;
    let (m, vars) = a4_matrix(sys, st);
    assert_eq!(m, m.transpose());
    let x0 = coordinates(sys, st, &vars);
    let w = |x: &[f64]| potential(sys, &set_coordinates(sys, st, &vars, x));
    assert!((w(&x0) - potential(sys, st)).abs() < 1e-12);
    let h = 1e-4;
    for a in 0..vars.len() {
        for b in 0..vars.len() {
            let at = |da: f64, db: f64| {
                let mut x = x0.clone();
                x[a] += da;
                x[b] += db;
                w(&x)
            };
            let fd = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
            assert!(
                (fd - m[(a, b)]).abs() < 1e-5 * (1.0 + fd.abs()),
                "{:?},{:?}: {fd} vs {}",
                vars[a],
                vars[b],
                m[(a, b)]
            );
        }
    }
}

#[test]
fn flat_profile_is_positive_definite() {
    let s = common::small();
    let mut st = s.initial.clone();
    st.alg.theta.iter_mut().for_each(|t| *t = 0.0);
    st.alg.v.iter_mut().for_each(|v| *v = 1.0);
    for m in &mut st.machines {
        m.delta = 0.0;
        m.eq_p = 1.0;
    }
    let r = hessian_check_a4(&s.system, &st);
    assert!(r.positive_definite && r.min_eigenvalue > 0.0, "{r:?}");
}

#[test]
fn widening_one_line_angle_destroys_definiteness() {
    let sc = chain();
    let (sys, st) = (&sc.system, &sc.initial);
    let (_, vars) = a4_matrix(sys, st);
    let x0 = coordinates(sys, st, &vars);
    let k = vars.iter().position(|v| *v == HessianVariable::LineAngle(1)).unwrap();
    let mut last = f64::INFINITY;
    let mut turned = None;
    for step in 0..=60 {
        let mut x = x0.clone();
        x[k] = step as f64 * std::f64::consts::PI / 60.0;
        let r = hessian_check_a4(sys, &set_coordinates(sys, st, &vars, &x));
        if x[k] >= x0[k].abs() && x[k] <= std::f64::consts::FRAC_PI_2 {
            assert!(r.min_eigenvalue <= last + 1e-12, "not decreasing at {}", x[k]);
            last = r.min_eigenvalue;
        }
        if !r.positive_definite && turned.is_none() {
            turned = Some(x[k]);
        }
    }
    assert!(turned.is_some(), "min eigenvalue never turned negative");
    assert!(hessian_check_a4(sys, st).positive_definite);
}

#[test]
fn zero_load_step_changes_nothing() {
    let s = common::small();
    let bus = s.system.net.bus_by_label(4).unwrap();
    let ev = Event { at: 0.0, kind: EventKind::LoadStep { bus, dp: 0.0, dq: 0.0 } };
    let (sys, st) = apply_event(&s.system, &s.initial, &ev).unwrap();
    assert_eq!(sys.net, s.system.net);
    assert!(max_diff(&st.differential(), &s.initial.differential()) == 0.0);
    assert!(max_diff(&st.alg.v, &s.initial.alg.v) < 1e-12);
}

#[test]
fn tripping_g32_keeps_the_comm_graph_connected() {
    let s = load_bundled("ne39").unwrap();
    let bus = s.system.net.bus_by_label(32).unwrap();
    let ev = Event { at: 0.0, kind: EventKind::GeneratorTrip { bus } };
    let (sys, st) = apply_event(&s.system, &s.initial, &ev).unwrap();
    assert!(check_connectivity(&sys.net).comm_connected);
    assert_eq!(sys.net.comm_edges().len(), st.z.len());
    assert!(sys.net.comm_edges().iter().all(|&(i, j)| i != bus && j != bus));
}

#[test]
fn trip_then_reclose_restores_the_network_exactly() {
    let s = load_bundled("ne39").unwrap();
    let (from, to) = (s.system.net.bus_by_label(4).unwrap(), s.system.net.bus_by_label(14).unwrap());
    let trip = Event { at: 0.0, kind: EventKind::LineTrip { from, to } };
    let reclose = Event { at: 0.0, kind: EventKind::LineReclose { from, to } };
    let (open, st) = apply_event(&s.system, &s.initial, &trip).unwrap();
    assert_ne!(open.net, s.system.net);
    let (closed, st) = apply_event(&open, &st, &reclose).unwrap();
    assert_eq!(closed.net, s.system.net);
    assert!(max_diff(&st.alg.v, &s.initial.alg.v) < 1e-9);
    assert!(matches!(apply_event(&closed, &st, &reclose), Err(SimError::EventNotApplicable { .. })));
}

#[test]
fn islanding_event_is_rejected() {
    let s = common::small();
    let net = &s.system.net;
    let (b1, b2, b4) = (net.bus_by_label(1).unwrap(), net.bus_by_label(2).unwrap(), net.bus_by_label(4).unwrap());
    let ev = Event { at: 0.0, kind: EventKind::LineTrip { from: b1, to: b2 } };
    let (sys, st) = apply_event(&s.system, &s.initial, &ev).unwrap();
    let ev = Event { at: 0.0, kind: EventKind::LineTrip { from: b4, to: b1 } };
    assert!(matches!(apply_event(&sys, &st, &ev), Err(SimError::DisconnectedAfterEvent { graph: Graph::Power, .. })));
}

#[test]
fn undisturbed_run_stays_flat_and_is_detected_steady() {
    let s = common::small();
    let mut settings = s.settings;
    settings.t_end = 8.0;
    let traj = run(s.system.clone(), s.initial.clone(), &[], &settings).unwrap();
    let x0 = s.initial.differential();
    for r in &traj.records {
        assert!(max_diff(&r.state.differential(), &x0) < 1e-10);
    }
    let ss = detect_steady_state(&traj, 5.0, 1e-6);
    assert!(ss.converged, "{ss:?}");
    assert!(max_diff(&ss.equilibrium.differential(), &x0) < 1e-10);
}

#[test]
fn sustained_oscillation_is_not_steady() {
    let s = common::small();
    let ev = evaluate_stage(&s.system, &s.initial).unwrap();
    let max_rate = ev.rates.iter().fold(0.0, |m: f64, r| m.max(r.abs()));
    let records = (0..1000)
        .map(|k| {
            let mut st = s.initial.clone();
            st.time = k as f64 * 0.01;
            st.machines[0].omega = 1e-3 * (2.0 * st.time).sin();
            Record { state: st, segment: 0, max_rate }
        })
        .collect();
    let traj = Trajectory { segments: vec![s.system.clone()], records };
    assert!(!detect_steady_state(&traj, 5.0, 1e-6).converged);
}

#[test]
fn stage_one_has_settled_by_seventy_seconds() {
    let mut s = load_bundled("ne39").unwrap();
    s.settings.t_end = 70.0;
    let o = run_scenario(&s).unwrap();
    assert!(o.steady.converged, "{:?}", o.steady);
    assert!(o.steady.max_omega < 1e-3 && o.steady.max_omega_tilde < 1e-3);
}

#[test]
fn runaway_frequency_is_reported_as_divergence() {
    let s = common::small();
    let mut settings = s.settings;
    settings.omega_bound = 1e-6;
    settings.t_end = 5.0;
    let r = run(s.system.clone(), s.initial.clone(), &s.events, &settings);
    match r {
        Err(SimError::Diverged { time, .. }) => assert!(time > 1.0),
        other => panic!("expected divergence, got {:?}", other.map(|t| t.records.len())),
    }
}
