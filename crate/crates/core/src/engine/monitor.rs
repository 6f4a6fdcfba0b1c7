use serde::Serialize;

use super::hessian::hessian_is_positive_definite;
use super::lyapunov::lyapunov_value;
use super::steady::mu_spread;
use super::{hessian_check_a4, System, SystemState, Trajectory};
use crate::dispatch::{kkt_residual, solve_sfc, DispatchProblem, DispatchSolution, KktReport, Limits};
use crate::machines::{internal_voltage, PortSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorOptions {
    /// Run the full eigensolve every this many samples (Cholesky otherwise).
    pub hessian_eig_every: usize,
}

impl Default for MonitorOptions {
    fn default() -> Self {
        Self { hessian_eig_every: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorSample {
    pub time: f64,
    pub segment: usize,
    /// W relative to the supplied equilibrium; only in the final segment.
    pub lyapunov_w: Option<f64>,
    /// Central difference of W; None at segment edges.
    pub lyapunov_wdot: Option<f64>,
    pub kkt_residual: f64,
    pub max_freq_dev: f64,
    pub mu_spread: f64,
    pub hessian_pd: bool,
    pub hessian_min_eig: Option<f64>,
}

fn unit_problem(sys: &System, state: &SystemState) -> (Vec<usize>, DispatchProblem) {
    let online: Vec<usize> = (0..sys.units.len()).filter(|&k| sys.unit_online(k)).collect();
    let costs = online.iter().map(|&k| sys.units[k].cost).collect();
    let limits = online
        .iter()
        .map(|&k| {
            let p = sys.unit_params(k);
            Limits { p_min: p.p_min, p_max: p.p_max }
        })
        .collect();
    let demand = online.iter().map(|&k| state.machines[sys.units[k].machine].pg).sum();
    (online, DispatchProblem::certification(costs, limits, demand))
}

/// KKT residuals of the units' (P^g, μ, γ⁻, γ⁺) for the demand they
/// currently serve, in p.u.
pub fn kkt_at(sys: &System, state: &SystemState) -> KktReport {
    let (online, problem) = unit_problem(sys, state);
    let pick = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { online.iter().map(|&k| f(k)).collect() };
    let pg = pick(&|k| state.machines[sys.units[k].machine].pg);
    let mu = pick(&|k| state.controllers[k].mu);
    let gm = pick(&|k| state.controllers[k].gamma_minus);
    let gp = pick(&|k| state.controllers[k].gamma_plus);
    kkt_residual(&problem, &pg, &mu, &gm, &gp)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchComparison {
    /// Unit indices compared, in order.
    pub units: Vec<usize>,
    pub demand: f64,
    pub simulated: Vec<f64>,
    pub oracle: DispatchSolution,
    /// max_i |P_i − P_i*| / max(|P_i*|, 1e-6)
    pub max_rel_error: f64,
}

/// Solves the centralized dispatch for the demand the units serve at `state`
/// and compares with their simulated outputs. The demand is clamped into the
/// capacity range first.
pub fn run_derived_dispatch(sys: &System, state: &SystemState) -> Result<DispatchComparison, crate::DispatchError> {
    let (units, cert) = unit_problem(sys, state);
    let lo: f64 = cert.limits().iter().map(|l| l.p_min).sum();
    let hi: f64 = cert.limits().iter().map(|l| l.p_max).sum();
    let demand = cert.demand().clamp(lo, hi);
    let problem = DispatchProblem::new(cert.costs().to_vec(), cert.limits().to_vec(), demand)?;
    let oracle = solve_sfc(&problem);
    let simulated: Vec<f64> = units.iter().map(|&k| state.machines[sys.units[k].machine].pg).collect();
    let max_rel_error =
        simulated.iter().zip(&oracle.pg).map(|(p, o)| (p - o).abs() / o.abs().max(1e-6)).fold(0.0, f64::max);
    Ok(DispatchComparison { units, demand: cert.demand(), simulated, oracle, max_rel_error })
}

/// Port signals of one generator along the trajectory.
pub fn passivity_series(traj: &Trajectory, generator: usize) -> Vec<PortSample> {
    traj.records
        .iter()
        .map(|r| {
            let sys = traj.system_of(r);
            let g = &sys.generators[generator];
            let m = &r.state.machines[generator];
            let (v, theta) = (r.state.alg.v[g.bus], r.state.alg.theta[g.bus]);
            PortSample {
                time: r.state.time,
                segment: r.segment,
                omega: m.omega,
                pg: m.pg,
                ef: m.ef,
                eq: internal_voltage(&g.params, m, v, theta),
            }
        })
        .collect()
}

/// Monitors at every recorded sample. W and Ẇ need an equilibrium of the
/// final segment's system and are left out elsewhere.
pub fn evaluate_monitors(
    traj: &Trajectory,
    equilibrium: Option<&SystemState>,
    opts: &MonitorOptions,
) -> Vec<MonitorSample> {
    let last_segment = traj.last().segment;
    let stride = opts.hessian_eig_every.max(1);
    let mut out: Vec<MonitorSample> = traj
        .records
        .iter()
        .enumerate()
        .map(|(idx, r)| {
            let sys = traj.system_of(r);
            let s = &r.state;
            let max_freq_dev = sys
                .generators
                .iter()
                .zip(&s.machines)
                .filter(|(g, _)| g.online)
                .map(|(_, m)| m.omega.abs())
                .chain(s.alg.omega_tilde.iter().map(|w| w.abs()))
                .fold(0.0, f64::max);
            let hessian_min_eig = (idx % stride == 0).then(|| hessian_check_a4(sys, s).min_eigenvalue);
            let hessian_pd = match hessian_min_eig {
                Some(e) => e > 0.0,
                None => hessian_is_positive_definite(sys, s),
            };
            let lyapunov_w =
                equilibrium.filter(|_| r.segment == last_segment).map(|eq| lyapunov_value(sys, s, eq).total);
            MonitorSample {
                time: s.time,
                segment: r.segment,
                lyapunov_w,
                lyapunov_wdot: None,
                kkt_residual: kkt_at(sys, s).max,
                max_freq_dev,
                mu_spread: mu_spread(s, |k| sys.unit_online(k)),
                hessian_pd,
                hessian_min_eig,
            }
        })
        .collect();
    for k in 1..out.len().saturating_sub(1) {
        let (a, c) = (&out[k - 1], &out[k + 1]);
        if a.segment != out[k].segment || c.segment != out[k].segment || c.time <= a.time {
            continue;
        }
        if let (Some(wa), Some(wc)) = (a.lyapunov_w, c.lyapunov_w) {
            out[k].lyapunov_wdot = Some((wc - wa) / (c.time - a.time));
        }
    }
    out
}
