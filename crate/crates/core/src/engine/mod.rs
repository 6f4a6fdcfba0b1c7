//! Closed-loop simulation: fixed-step RK4 over the differential states with
//! the reactive voltage balance solved inside every stage, timed events, and
//! monitors evaluated on the recorded trajectory.

mod events;
mod hessian;
mod init;
mod lyapunov;
mod monitor;
mod steady;

pub use events::{apply_event, Event, EventKind};
pub use hessian::{a4_matrix, hessian_check_a4, weakest_mode, HessianReport, HessianVariable};
pub use init::{initialize, PowerFlowTargets};
pub use lyapunov::{lyapunov_value, potential, potential_gradient, LyapunovParts, PotentialGradient};
pub use monitor::{
    evaluate_monitors, kkt_at, passivity_series, run_derived_dispatch, DispatchComparison, MonitorOptions,
    MonitorSample,
};
pub use steady::{detect_steady_state, SteadyState};

use serde::{Deserialize, Serialize};

use crate::controller::{
    control_input, gamma_dynamics, mu_dynamics_measured, mu_dynamics_oracle, z_dynamics, AgcConfig, ControllerGains,
    ControllerState, CostFunction, NeighborView, Variant,
};
use crate::error::{SimError, SolveError};
use crate::machines::{
    air_gap, droop_control, droop_control_with_reference, excitation_control, machine_derivatives, AirGap,
    MachineParams, MachineState,
};
use crate::network::{
    bus_frequencies, bus_power_mismatch, solve_voltages, AlgebraicState, Emf, Injection, NetworkModel, VoltageOptions,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub params: MachineParams,
    pub online: bool,
}

/// Optimizing controller attached to one controllable generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllableUnit {
    pub machine: usize,
    pub cost: CostFunction,
    pub gains: ControllerGains,
    /// Initial output; anchors the virtual-load split of the oracle variant.
    pub p_hat_base: f64,
}

/// Edge list of the communication graph expressed in unit indices, aligned
/// with [`NetworkModel::comm_edges`] and with `SystemState::z`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommTopology {
    pub edges: Vec<(usize, usize)>,
    /// Per unit: (edge index, neighbor unit, sign of z seen from this unit).
    pub incident: Vec<Vec<(usize, usize, f64)>>,
}

/// Everything the right-hand side needs besides the state.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub net: NetworkModel,
    pub generators: Vec<Generator>,
    pub units: Vec<ControllableUnit>,
    pub variant: Variant,
    pub agc: Option<AgcConfig>,
    pub voltage: VoltageOptions,
    topology: CommTopology,
}

impl System {
    pub fn new(
        net: NetworkModel,
        generators: Vec<Generator>,
        units: Vec<ControllableUnit>,
        variant: Variant,
        agc: Option<AgcConfig>,
        voltage: VoltageOptions,
    ) -> Self {
        let mut sys = Self { net, generators, units, variant, agc, voltage, topology: CommTopology::default() };
        sys.rebuild_topology();
        sys
    }

    pub(crate) fn rebuild_topology(&mut self) {
        let unit_at_bus = |bus: usize| {
            self.units
                .iter()
                .position(|u| self.generators[u.machine].bus == bus)
                .expect("comm edge endpoints carry controllable units")
        };
        let edges: Vec<(usize, usize)> =
            self.net.comm_edges().iter().map(|&(i, j)| (unit_at_bus(i), unit_at_bus(j))).collect();
        let mut incident = vec![Vec::new(); self.units.len()];
        for (e, &(a, b)) in edges.iter().enumerate() {
            incident[a].push((e, b, 1.0));
            incident[b].push((e, a, -1.0));
        }
        self.topology = CommTopology { edges, incident };
    }

    pub fn topology(&self) -> &CommTopology {
        &self.topology
    }

    pub fn unit_params(&self, unit: usize) -> &MachineParams {
        &self.generators[self.units[unit].machine].params
    }

    pub fn unit_online(&self, unit: usize) -> bool {
        self.generators[self.units[unit].machine].online
    }

    /// Gain used for an edge variable: the owning (lower bus index) endpoint's k_z.
    pub fn edge_gain(&self, edge: usize) -> f64 {
        self.units[self.topology.edges[edge].0].gains.k_z
    }

    pub fn emfs(&self, machines: &[MachineState]) -> Vec<Emf> {
        self.generators
            .iter()
            .zip(machines)
            .filter(|(g, _)| g.online)
            .map(|(g, m)| Emf { bus: g.bus, e: m.eq_p, delta: m.delta, x_dp: g.params.x_dp })
            .collect()
    }
}

/// All differential and algebraic variables at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub time: f64,
    pub machines: Vec<MachineState>,
    pub alg: AlgebraicState,
    pub controllers: Vec<ControllerState>,
    /// One value per comm edge, aligned with the network's edge list.
    pub z: Vec<f64>,
}

const MACHINE_DIM: usize = 5;
const UNIT_DIM: usize = 4;

impl SystemState {
    pub fn differential_len(&self) -> usize {
        MACHINE_DIM * self.machines.len() + self.alg.theta.len() + UNIT_DIM * self.controllers.len() + self.z.len()
    }

    /// Differential variables packed as
    /// (δ, ω, E'q, P^g, E_f)*, θ*, (μ, γ⁻, γ⁺, agc_ref)*, z*.
    pub fn differential(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.differential_len());
        for m in &self.machines {
            x.extend_from_slice(&[m.delta, m.omega, m.eq_p, m.pg, m.ef]);
        }
        x.extend_from_slice(&self.alg.theta);
        for c in &self.controllers {
            x.extend_from_slice(&[c.mu, c.gamma_minus, c.gamma_plus, c.agc_ref]);
        }
        x.extend_from_slice(&self.z);
        x
    }

    pub fn set_differential(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.differential_len());
        let mut it = x.iter().copied();
        let mut next = || it.next().unwrap();
        for m in &mut self.machines {
            *m = MachineState { delta: next(), omega: next(), eq_p: next(), pg: next(), ef: next() };
        }
        for t in &mut self.alg.theta {
            *t = next();
        }
        for c in &mut self.controllers {
            c.mu = next();
            c.gamma_minus = next();
            c.gamma_plus = next();
            c.agc_ref = next();
        }
        for z in &mut self.z {
            *z = next();
        }
    }
}

/// Derivatives at a stage plus the algebraic solution found there.
#[derive(Debug, Clone)]
pub struct StageEval {
    pub rates: Vec<f64>,
    pub v: Vec<f64>,
    pub omega_tilde: Vec<f64>,
    pub air: Vec<Option<AirGap>>,
    pub newton_iterations: usize,
}

/// Air gaps of online machines at the given voltage profile (None offline).
pub fn air_gaps(sys: &System, machines: &[MachineState], alg: &AlgebraicState) -> Vec<Option<AirGap>> {
    sys.generators
        .iter()
        .zip(machines)
        .map(|(g, m)| g.online.then(|| air_gap(&g.params, m, alg.v[g.bus], alg.theta[g.bus])))
        .collect()
}

/// Bus injections and frequency deviations for a solved voltage profile.
pub fn bus_frequency_profile(sys: &System, air: &[Option<AirGap>], alg: &AlgebraicState) -> Vec<f64> {
    let mut inj = vec![Injection::default(); sys.net.n_buses()];
    for (g, a) in sys.generators.iter().zip(air) {
        if let Some(a) = a {
            inj[g.bus].p += a.pe;
            inj[g.bus].q += a.qe;
        }
    }
    let mm = bus_power_mismatch(&sys.net, alg, &inj);
    bus_frequencies(&sys.net, &mm.dp)
}

/// Centre-of-inertia frequency of the online machines.
pub fn coi_frequency(sys: &System, machines: &[MachineState]) -> f64 {
    let (num, den) = sys
        .generators
        .iter()
        .zip(machines)
        .filter(|(g, _)| g.online)
        .fold((0.0, 0.0), |(n, d), (g, m)| (n + g.params.m * m.omega, d + g.params.m));
    num / den
}

/// Solves the voltages for `state` (warm-started from `state.alg.v`) and
/// evaluates every differential right-hand side.
pub fn evaluate_stage(sys: &System, state: &SystemState) -> Result<StageEval, SolveError> {
    let emfs = sys.emfs(&state.machines);
    let sol = solve_voltages(&sys.net, &state.alg.theta, &emfs, &state.alg.v, &sys.voltage)?;
    let alg = AlgebraicState { theta: state.alg.theta.clone(), v: sol.v, omega_tilde: Vec::new() };
    let air = air_gaps(sys, &state.machines, &alg);
    let omega_tilde = bus_frequency_profile(sys, &air, &alg);
    let v = alg.v;
    let rates = differential_rates(sys, state, &air, &omega_tilde);
    Ok(StageEval { rates, v, omega_tilde, air, newton_iterations: sol.iterations })
}

fn differential_rates(sys: &System, state: &SystemState, air: &[Option<AirGap>], omega_tilde: &[f64]) -> Vec<f64> {
    let n_gen = sys.generators.len();
    let mut unit_of_machine = vec![None; n_gen];
    for (k, u) in sys.units.iter().enumerate() {
        unit_of_machine[u.machine] = Some(k);
    }
    let mut rates = Vec::with_capacity(state.differential_len());
    let mut omega_dot = vec![0.0; n_gen];
    for (g, gen) in sys.generators.iter().enumerate() {
        let m = &state.machines[g];
        let Some(a) = &air[g] else {
            rates.extend_from_slice(&[0.0; MACHINE_DIM]);
            continue;
        };
        let p = &gen.params;
        let u_g = match unit_of_machine[g] {
            Some(k) if sys.variant == Variant::Agc => droop_control_with_reference(p, m, state.controllers[k].agc_ref),
            Some(k) => {
                let unit = &sys.units[k];
                control_input(&unit.gains, &unit.cost, &state.controllers[k], m.omega, m.pg, p.t)
            }
            None => droop_control(p, m),
        };
        let h = excitation_control(p, m, a.eq);
        let d = machine_derivatives(p, m, a, u_g, h);
        omega_dot[g] = d.omega;
        rates.extend_from_slice(&[d.delta, d.omega, d.eq_p, d.pg, d.ef]);
    }
    rates.extend_from_slice(omega_tilde);

    let omega_coi = if sys.variant == Variant::Agc { coi_frequency(sys, &state.machines) } else { 0.0 };
    let mut mus = Vec::new();
    let mut zs = Vec::new();
    for (k, unit) in sys.units.iter().enumerate() {
        let g = unit.machine;
        if !sys.generators[g].online {
            rates.extend_from_slice(&[0.0; UNIT_DIM]);
            continue;
        }
        let c = &state.controllers[k];
        let m = &state.machines[g];
        let p = &sys.generators[g].params;
        if sys.variant == Variant::Agc {
            let share = sys.agc.as_ref().map_or(0.0, |cfg| cfg.shares[k]);
            let k_f = sys.agc.as_ref().map_or(0.0, |cfg| cfg.k_f);
            rates.extend_from_slice(&[0.0, 0.0, 0.0, -share * k_f * omega_coi]);
            continue;
        }
        mus.clear();
        zs.clear();
        for &(e, other, sign) in &sys.topology.incident[k] {
            mus.push(state.controllers[other].mu);
            zs.push(sign * state.z[e]);
        }
        let view = NeighborView { neighbor_mus: &mus, incident_z: &zs };
        let mu_dot = match sys.variant {
            Variant::Oracle => mu_dynamics_oracle(&unit.gains, c, m.pg, view),
            _ => mu_dynamics_measured(&unit.gains, &unit.cost, c, p.m, p.d, m.omega, omega_dot[g], m.pg, view),
        };
        let (gm, gp) = gamma_dynamics(&unit.gains, m.pg, p.p_min, p.p_max, c.gamma_minus, c.gamma_plus);
        rates.extend_from_slice(&[mu_dot, gm, gp, 0.0]);
    }
    for (e, &(a, b)) in sys.topology.edges.iter().enumerate() {
        let rate = if sys.variant == Variant::Agc {
            0.0
        } else {
            z_dynamics(sys.edge_gain(e), state.controllers[a].mu, state.controllers[b].mu)
        };
        rates.push(rate);
    }
    rates
}

/// Re-solves voltages and ω̃ so the algebraic part matches the differential part.
pub fn resolve_algebraic(sys: &System, state: &mut SystemState) -> Result<StageEval, SolveError> {
    let eval = evaluate_stage(sys, state)?;
    state.alg.v.clone_from(&eval.v);
    state.alg.omega_tilde.clone_from(&eval.omega_tilde);
    Ok(eval)
}

/// One classical RK4 step of size `dt`. `current` is the stage evaluation at
/// `state` if already known. Returns the new state (algebraic part solved and
/// γ± clamped) together with its own stage evaluation.
pub fn step_with(
    sys: &System,
    state: &SystemState,
    current: Option<StageEval>,
    dt: f64,
) -> Result<(SystemState, StageEval), SolveError> {
    let x0 = state.differential();
    let k1 = match current {
        Some(e) => e,
        None => evaluate_stage(sys, state)?,
    };
    let mut stage = state.clone();
    let at = |h: f64, k: &StageEval, stage: &mut SystemState| -> Result<StageEval, SolveError> {
        let x: Vec<f64> = x0.iter().zip(&k.rates).map(|(x, r)| x + h * r).collect();
        stage.set_differential(&x);
        stage.alg.v.clone_from(&k.v);
        evaluate_stage(sys, stage)
    };
    let k2 = at(0.5 * dt, &k1, &mut stage)?;
    let k3 = at(0.5 * dt, &k2, &mut stage)?;
    let k4 = at(dt, &k3, &mut stage)?;
    let x: Vec<f64> = (0..x0.len())
        .map(|i| x0[i] + dt / 6.0 * (k1.rates[i] + 2.0 * k2.rates[i] + 2.0 * k3.rates[i] + k4.rates[i]))
        .collect();
    let mut next = state.clone();
    next.set_differential(&x);
    next.time = state.time + dt;
    for c in &mut next.controllers {
        c.gamma_minus = c.gamma_minus.max(0.0);
        c.gamma_plus = c.gamma_plus.max(0.0);
    }
    next.alg.v.clone_from(&k4.v);
    let eval = resolve_algebraic(sys, &mut next)?;
    Ok((next, eval))
}

/// Convenience wrapper around [`step_with`] that discards the evaluation.
pub fn step(sys: &System, state: &SystemState, dt: f64) -> Result<SystemState, SolveError> {
    step_with(sys, state, None, dt).map(|(s, _)| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub dt: f64,
    pub t_end: f64,
    pub record_every: f64,
    pub omega_bound: f64,
    pub v_min: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self { dt: 0.002, t_end: 60.0, record_every: 0.01, omega_bound: 10.0, v_min: 0.2 }
    }
}

/// A recorded sample. `segment` increments at every event so difference
/// stencils never straddle a discontinuity.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub state: SystemState,
    pub segment: usize,
    /// Largest absolute differential rate at this sample.
    pub max_rate: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// System in force during each segment.
    pub segments: Vec<System>,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectory records the initial state")
    }

    pub fn system_of(&self, record: &Record) -> &System {
        &self.segments[record.segment]
    }

    pub fn final_system(&self) -> &System {
        self.segments.last().expect("at least one segment")
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_bounds(sys: &System, state: &SystemState, settings: &RunSettings) -> Result<(), SimError> {
    for (g, m) in sys.generators.iter().zip(&state.machines) {
        if g.online && !(m.omega.abs() <= settings.omega_bound) {
            return Err(SimError::Diverged {
                time: state.time,
                reason: format!("machine at bus index {} has |omega|={:.3e}", g.bus, m.omega.abs()),
            });
        }
    }
    if let Some((i, v)) = state.alg.v.iter().enumerate().find(|(_, &v)| !(v >= settings.v_min)) {
        return Err(SimError::Diverged { time: state.time, reason: format!("bus index {i} voltage {v:.4}") });
    }
    Ok(())
}

/// Integrates from `state.time` to `settings.t_end`, applying events exactly at
/// their timestamps (a shortened step lands on each event time).
pub fn run(sys: System, state: SystemState, events: &[Event], settings: &RunSettings) -> Result<Trajectory, SimError> {
    let mut events: Vec<Event> = events.to_vec();
    events.sort_by(|a, b| a.at.total_cmp(&b.at));
    let mut sys = sys;
    let mut state = state;
    let t0 = state.time;
    let record_stride = (settings.record_every / settings.dt).round().max(1.0) as u64;
    let mut eval = resolve_algebraic(&sys, &mut state).map_err(|source| SimError::Solve { time: t0, source })?;
    let mut traj = Trajectory { segments: vec![sys.clone()], records: Vec::new() };
    let record = |traj: &mut Trajectory, state: &SystemState, eval: &StageEval| {
        let segment = traj.segments.len() - 1;
        traj.records.push(Record { state: state.clone(), segment, max_rate: max_abs(&eval.rates) });
    };
    record(&mut traj, &state, &eval);
    let mut pending = events.into_iter().peekable();
    let mut segment_start = t0;
    let mut n: u64 = 0;
    let tiny = 1e-9 * settings.dt;
    while state.time < settings.t_end - tiny {
        while let Some(ev) = pending.next_if(|e| e.at <= state.time + tiny) {
            let (s2, st2) = apply_event(&sys, &state, &ev)?;
            sys = s2;
            state = st2;
            eval = evaluate_stage(&sys, &state).map_err(|source| SimError::Solve { time: state.time, source })?;
            traj.segments.push(sys.clone());
            record(&mut traj, &state, &eval);
            segment_start = state.time;
            n = 0;
        }
        let boundary = pending.peek().map_or(settings.t_end, |e| e.at.min(settings.t_end));
        let t_grid = segment_start + (n + 1) as f64 * settings.dt;
        let (h, landed) =
            if t_grid >= boundary - tiny { (boundary - state.time, true) } else { (t_grid - state.time, false) };
        let (mut next, e) =
            step_with(&sys, &state, Some(eval), h).map_err(|source| SimError::Solve { time: state.time, source })?;
        next.time = if landed { boundary } else { t_grid };
        n += 1;
        check_bounds(&sys, &next, settings)?;
        state = next;
        eval = e;
        let on_cadence = ((state.time - t0) / settings.dt).round() as u64 % record_stride == 0;
        if on_cadence || landed {
            record(&mut traj, &state, &eval);
        }
    }
    Ok(traj)
}
