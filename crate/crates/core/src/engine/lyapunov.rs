//! Lyapunov function of the closed loop relative to a given equilibrium.
//!
//! The potential used here is
//!
//! ```text
//! W̃p = Σ ½B_ii V² + Σ p θ + Σ q ln V − Σ_lines B V_i V_j cos(θ_i − θ_j)
//!      − Σ_G E'V cos(δ − θ)/x'd + Σ_G x_d E'²/(2x'd(x_d − x'd))
//! ```
//!
//! with B_ii the in-service line susceptances at bus i plus 1/x'd of an online
//! machine there. Its gradient is (E_q/(x_d − x'd), −ΔQ/V, P_e, −ΔP), so it is
//! stationary in V wherever the reactive balance holds.

use serde::Serialize;

use super::{System, SystemState};
use crate::machines::{internal_voltage, terminal_power};
use crate::network::line_flows;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovParts {
    pub w_k: f64,
    pub w_p: f64,
    pub s_omega: f64,
    pub s_e: f64,
    pub total: f64,
}

/// Diagonal B_ii including the machine reactance of an online generator.
pub(crate) fn self_susceptances(sys: &System) -> Vec<f64> {
    let mut b: Vec<f64> = (0..sys.net.n_buses()).map(|i| sys.net.self_susceptance(i)).collect();
    for g in sys.generators.iter().filter(|g| g.online) {
        b[g.bus] += 1.0 / g.params.x_dp;
    }
    b
}

/// W̃p at a state. Panics on nonpositive voltages (ln V undefined).
pub fn potential(sys: &System, state: &SystemState) -> f64 {
    let (theta, v) = (&state.alg.theta, &state.alg.v);
    assert!(v.iter().all(|&x| x > 0.0), "potential needs positive voltages");
    let bii = self_susceptances(sys);
    let mut w = 0.0;
    for (i, bus) in sys.net.buses().iter().enumerate() {
        w += 0.5 * bii[i] * v[i] * v[i] + bus.p * theta[i] + bus.q * v[i].ln();
    }
    for l in sys.net.lines().iter().filter(|l| l.in_service) {
        w -= l.b * v[l.from] * v[l.to] * (theta[l.from] - theta[l.to]).cos();
    }
    for (g, m) in sys.generators.iter().zip(&state.machines).filter(|(g, _)| g.online) {
        let p = &g.params;
        w -= m.eq_p * v[g.bus] * (m.delta - theta[g.bus]).cos() / p.x_dp;
        w += p.x_d * m.eq_p * m.eq_p / (2.0 * p.x_dp * (p.x_d - p.x_dp));
    }
    w
}

/// Gradient of W̃p in the node coordinates (E'q, V, δ, θ). Entries for
/// offline machines are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialGradient {
    pub eq_p: Vec<f64>,
    pub v: Vec<f64>,
    pub delta: Vec<f64>,
    pub theta: Vec<f64>,
}

pub fn potential_gradient(sys: &System, state: &SystemState) -> PotentialGradient {
    let (theta, v) = (&state.alg.theta, &state.alg.v);
    let n = sys.net.n_buses();
    let bii = self_susceptances(sys);
    let mut gv: Vec<f64> = (0..n).map(|i| bii[i] * v[i] + sys.net.buses()[i].q / v[i]).collect();
    let mut gt: Vec<f64> = sys.net.buses().iter().map(|b| b.p).collect();
    for (l, f) in sys.net.lines().iter().zip(line_flows(&sys.net, &state.alg)) {
        if !l.in_service {
            continue;
        }
        let c = (theta[l.from] - theta[l.to]).cos();
        gv[l.from] -= l.b * v[l.to] * c;
        gv[l.to] -= l.b * v[l.from] * c;
        gt[l.from] += f.p_ij;
        gt[l.to] += f.p_ji;
    }
    let n_gen = sys.generators.len();
    let (mut ge, mut gd) = (vec![0.0; n_gen], vec![0.0; n_gen]);
    for (k, (g, m)) in sys.generators.iter().zip(&state.machines).enumerate() {
        if !g.online {
            continue;
        }
        let i = g.bus;
        let p = &g.params;
        let (pe, _) = terminal_power(m.eq_p, m.delta, p.x_dp, v[i], theta[i]);
        ge[k] = internal_voltage(p, m, v[i], theta[i]) / (p.x_d - p.x_dp);
        gd[k] = pe;
        gv[i] -= m.eq_p * (m.delta - theta[i]).cos() / p.x_dp;
        gt[i] -= pe;
    }
    PotentialGradient { eq_p: ge, v: gv, delta: gd, theta: gt }
}

/// W = W_k + W_p + ΣS_ω + ΣS_E/(T'd0(x_d − x'd)) relative to `equilibrium`.
///
/// W_k carries ½Mω² over online machines and the controller states weighted
/// by the inverse of their own gains; W_p is the Bregman divergence of W̃p.
/// S_ω = ½(ΔP^g)² for droop units, S_E = (ΔE_f)²/(2k_E) for every machine.
pub fn lyapunov_value(sys: &System, state: &SystemState, equilibrium: &SystemState) -> LyapunovParts {
    let mut w_k = 0.0;
    let mut s_omega = 0.0;
    let mut s_e = 0.0;
    for (g, (m, e)) in sys.generators.iter().zip(state.machines.iter().zip(&equilibrium.machines)) {
        if !g.online {
            continue;
        }
        let p = &g.params;
        let dw = m.omega - e.omega;
        w_k += 0.5 * p.m * dw * dw;
        let dp = m.pg - e.pg;
        if !p.controllable {
            s_omega += 0.5 * dp * dp;
        }
        let de = m.ef - e.ef;
        s_e += 0.5 * de * de / p.k_e / (p.t_d0p * (p.x_d - p.x_dp));
    }
    for (k, u) in sys.units.iter().enumerate() {
        if !sys.unit_online(k) {
            continue;
        }
        let (c, ce) = (&state.controllers[k], &equilibrium.controllers[k]);
        let dp = state.machines[u.machine].pg - equilibrium.machines[u.machine].pg;
        let g = &u.gains;
        w_k += 0.5
            * (dp * dp / g.k_pg
                + (c.mu - ce.mu).powi(2) / g.k_mu
                + ((c.gamma_minus - ce.gamma_minus).powi(2) + (c.gamma_plus - ce.gamma_plus).powi(2)) / g.k_gamma);
    }
    for (e, (z, ze)) in state.z.iter().zip(&equilibrium.z).enumerate() {
        w_k += 0.5 * (z - ze).powi(2) / sys.edge_gain(e);
    }

    let grad = potential_gradient(sys, equilibrium);
    let mut linear = 0.0;
    for (k, g) in sys.generators.iter().enumerate() {
        if g.online {
            let (m, e) = (&state.machines[k], &equilibrium.machines[k]);
            linear += grad.eq_p[k] * (m.eq_p - e.eq_p) + grad.delta[k] * (m.delta - e.delta);
        }
    }
    for i in 0..sys.net.n_buses() {
        linear += grad.v[i] * (state.alg.v[i] - equilibrium.alg.v[i])
            + grad.theta[i] * (state.alg.theta[i] - equilibrium.alg.theta[i]);
    }
    let w_p = potential(sys, state) - potential(sys, equilibrium) - linear;
    LyapunovParts { w_k, w_p, s_omega, s_e, total: w_k + w_p + s_omega + s_e }
}
