use nalgebra::{DMatrix, DVector};

use super::{resolve_algebraic, System, SystemState};
use crate::controller::ControllerState;
use crate::error::SolveError;
use crate::machines::{internal_voltage, MachineState, Setpoints};
use crate::network::{line_flows, AlgebraicState};

/// Operating point requested from the initial power flow.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowTargets {
    /// Active output per generator, p.u.
    pub pg: Vec<f64>,
    /// Terminal voltage magnitude held by each generator, p.u.
    pub v_set: Vec<f64>,
}

/// Flows accumulated per bus: (Σ_j P_ij, Σ_j Q_ij).
fn bus_flow_sums(sys: &System, alg: &AlgebraicState) -> (Vec<f64>, Vec<f64>) {
    let n = sys.net.n_buses();
    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
    for (l, f) in sys.net.lines().iter().zip(line_flows(&sys.net, alg)) {
        p[l.from] += f.p_ij;
        q[l.from] += f.q_ij;
        p[l.to] += f.p_ji;
        q[l.to] += f.q_ji;
    }
    (p, q)
}

/// Solves a PV/PQ power flow with generator buses holding `v_set`, then backs
/// out each machine's internal EMF so that the resulting state is an
/// equilibrium of the closed loop. Setpoints of every machine and the
/// controller states are filled from that equilibrium.
pub fn initialize(sys: System, targets: &PowerFlowTargets) -> Result<(System, SystemState), SolveError> {
    let mut sys = sys;
    let n = sys.net.n_buses();
    let mut injection = vec![0.0; n];
    let mut held = vec![None; n];
    let mut reference = None;
    let mut best_m = f64::NEG_INFINITY;
    for (g, gen) in sys.generators.iter().enumerate() {
        if !gen.online {
            continue;
        }
        injection[gen.bus] += targets.pg[g];
        held[gen.bus] = Some(targets.v_set[g]);
        if gen.params.m > best_m {
            best_m = gen.params.m;
            reference = Some(gen.bus);
        }
    }
    let reference = reference.unwrap_or(0);
    let angle_vars: Vec<usize> = (0..n).filter(|&i| i != reference).collect();
    let volt_vars: Vec<usize> = (0..n).filter(|&i| held[i].is_none()).collect();
    let mut alg = AlgebraicState::flat(n);
    for (v, h) in alg.v.iter_mut().zip(&held) {
        if let Some(h) = h {
            *v = *h;
        }
    }
    let dim = angle_vars.len() + volt_vars.len();
    let unpack = |x: &DVector<f64>, alg: &mut AlgebraicState| {
        for (k, &i) in angle_vars.iter().enumerate() {
            alg.theta[i] = x[k];
        }
        for (k, &i) in volt_vars.iter().enumerate() {
            alg.v[i] = x[angle_vars.len() + k];
        }
    };
    let residual = |alg: &AlgebraicState| -> DVector<f64> {
        let (p, q) = bus_flow_sums(&sys, alg);
        let buses = sys.net.buses();
        let mut r = DVector::zeros(dim);
        for (k, &i) in angle_vars.iter().enumerate() {
            r[k] = injection[i] - buses[i].p - p[i];
        }
        for (k, &i) in volt_vars.iter().enumerate() {
            r[angle_vars.len() + k] = -buses[i].q - q[i];
        }
        r
    };
    let mut x = DVector::from_iterator(dim, angle_vars.iter().map(|_| 0.0).chain(volt_vars.iter().map(|_| 1.0)));
    unpack(&x, &mut alg);
    let mut r = residual(&alg);
    for _ in 0..40 {
        if r.amax() < 1e-11 {
            break;
        }
        let mut jac = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            let h = 1e-7 * x[c].abs().max(1.0);
            let mut xp = x.clone();
            xp[c] += h;
            let mut ap = alg.clone();
            unpack(&xp, &mut ap);
            let col = (residual(&ap) - &r) / h;
            jac.set_column(c, &col);
        }
        let dx = jac.lu().solve(&(-&r)).ok_or(SolveError::PowerFlow { residual: r.amax() })?;
        x += dx;
        unpack(&x, &mut alg);
        r = residual(&alg);
    }
    if !(r.amax() < 1e-9) {
        return Err(SolveError::PowerFlow { residual: r.amax() });
    }

    let (_, qflow) = bus_flow_sums(&sys, &alg);
    let mut machines = vec![MachineState::default(); sys.generators.len()];
    for (g, gen) in sys.generators.iter_mut().enumerate() {
        let i = gen.bus;
        let (v, theta) = (alg.v[i], alg.theta[i]);
        let p = targets.pg[g];
        let q = sys.net.buses()[i].q + qflow[i];
        let x = gen.params.x_dp;
        let (re, im) = (v + x * q / v, x * p / v);
        let mut m = MachineState { delta: theta + im.atan2(re), omega: 0.0, eq_p: re.hypot(im), pg: p, ef: 0.0 };
        let eq = internal_voltage(&gen.params, &m, v, theta);
        m.ef = eq;
        gen.params.setpoints = Setpoints { omega_ref: 0.0, pg_ref: p, ef_ref: eq, eq_ref: eq };
        machines[g] = m;
    }
    let controllers: Vec<ControllerState> = sys
        .units
        .iter_mut()
        .map(|u| {
            let pg = targets.pg[u.machine];
            u.p_hat_base = pg;
            ControllerState { mu: -u.cost.marginal(pg), gamma_minus: 0.0, gamma_plus: 0.0, p_hat: pg, agc_ref: pg }
        })
        .collect();
    let z = vec![0.0; sys.net.comm_edges().len()];
    let mut state = SystemState { time: 0.0, machines, alg, controllers, z };
    resolve_algebraic(&sys, &mut state)?;
    Ok((sys, state))
}
