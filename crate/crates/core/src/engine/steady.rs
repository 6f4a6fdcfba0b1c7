use serde::Serialize;

use super::{SystemState, Trajectory};

#[derive(Debug, Clone, Serialize)]
pub struct SteadyState {
    pub converged: bool,
    pub max_omega: f64,
    pub max_omega_tilde: f64,
    pub mu_spread: f64,
    pub max_rate: f64,
    /// Average of the tail samples.
    #[serde(skip)]
    pub equilibrium: SystemState,
}

pub(crate) fn mu_spread(traj_state: &SystemState, online: impl Fn(usize) -> bool) -> f64 {
    let mus: Vec<f64> =
        traj_state.controllers.iter().enumerate().filter(|(k, _)| online(*k)).map(|(_, c)| c.mu).collect();
    if mus.is_empty() {
        return 0.0;
    }
    let hi = mus.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = mus.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Converged iff over the trailing `window` seconds (all within the final
/// event segment) max|ω|, max|ω̃|, the μ spread and the largest differential
/// rate all stay below `tol`.
pub fn detect_steady_state(traj: &Trajectory, window: f64, tol: f64) -> SteadyState {
    let last = traj.last();
    let sys = traj.system_of(last);
    let t_last = last.state.time;
    let tail: Vec<_> =
        traj.records.iter().filter(|r| r.segment == last.segment && r.state.time >= t_last - window - 1e-9).collect();
    let covers = tail.first().is_some_and(|r| r.state.time <= t_last - window + 1e-9);
    let mut report = SteadyState {
        converged: false,
        max_omega: 0.0,
        max_omega_tilde: 0.0,
        mu_spread: 0.0,
        max_rate: 0.0,
        equilibrium: last.state.clone(),
    };
    for r in &tail {
        let s = &r.state;
        for (g, m) in sys.generators.iter().zip(&s.machines) {
            if g.online {
                report.max_omega = report.max_omega.max(m.omega.abs());
            }
        }
        for w in &s.alg.omega_tilde {
            report.max_omega_tilde = report.max_omega_tilde.max(w.abs());
        }
        report.mu_spread = report.mu_spread.max(mu_spread(s, |k| sys.unit_online(k)));
        report.max_rate = report.max_rate.max(r.max_rate);
    }
    let x: Vec<Vec<f64>> = tail.iter().map(|r| r.state.differential()).collect();
    let mut mean = vec![0.0; x[0].len()];
    for xi in &x {
        for (m, v) in mean.iter_mut().zip(xi) {
            *m += v / x.len() as f64;
        }
    }
    report.equilibrium.set_differential(&mean);
    let n_bus = last.state.alg.v.len();
    for i in 0..n_bus {
        report.equilibrium.alg.v[i] = tail.iter().map(|r| r.state.alg.v[i]).sum::<f64>() / tail.len() as f64;
        report.equilibrium.alg.omega_tilde[i] =
            tail.iter().map(|r| r.state.alg.omega_tilde[i]).sum::<f64>() / tail.len() as f64;
    }
    report.converged = covers
        && report.max_omega < tol
        && report.max_omega_tilde < tol
        && report.mu_spread < tol
        && report.max_rate < tol;
    report
}
