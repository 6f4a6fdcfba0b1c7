//! Run artifacts: trajectory CSV, summary JSON and their readers.

use std::path::Path;

use serde::Serialize;

use crate::dispatch::KktReport;
use crate::engine::{Record, SteadyState, SystemState, Trajectory};
use crate::scenario::{RunOutcome, Scenario, ScenarioFile};

/// Column names of the trajectory CSV for a scenario, in write order.
///
/// Buses and generators are named by external bus number; communication
/// edges by the bus numbers of their endpoints.
pub fn trajectory_header(scenario: &Scenario) -> Vec<String> {
    let sys = &scenario.system;
    let mut h = vec!["time".to_string()];
    for &label in &scenario.labels {
        for var in ["theta", "v", "omega_tilde"] {
            h.push(format!("bus{label}.{var}"));
        }
    }
    for g in &sys.generators {
        let label = scenario.label(g.bus);
        for var in ["delta", "omega", "eq_p", "pg_pu", "pg_mw", "ef"] {
            h.push(format!("gen{label}.{var}"));
        }
    }
    for u in &sys.units {
        let label = scenario.label(sys.generators[u.machine].bus);
        for var in ["mu", "gamma_minus", "gamma_plus", "agc_ref"] {
            h.push(format!("gen{label}.{var}"));
        }
    }
    for &(i, j) in sys.net.comm_edges() {
        h.push(format!("edge{}-{}.z", scenario.label(i), scenario.label(j)));
    }
    h
}

/// One CSV row for a record. Edge columns of links removed by an event hold NaN.
pub fn trajectory_row(scenario: &Scenario, traj: &Trajectory, r: &Record) -> Vec<f64> {
    let s = &r.state;
    let base = scenario.system.net.base_mva();
    let mut row = vec![s.time];
    for i in 0..scenario.labels.len() {
        row.extend_from_slice(&[s.alg.theta[i], s.alg.v[i], s.alg.omega_tilde[i]]);
    }
    for m in &s.machines {
        row.extend_from_slice(&[m.delta, m.omega, m.eq_p, m.pg, m.pg * base, m.ef]);
    }
    for c in &s.controllers {
        row.extend_from_slice(&[c.mu, c.gamma_minus, c.gamma_plus, c.agc_ref]);
    }
    let now = traj.system_of(r).net.comm_edges();
    for edge in scenario.system.net.comm_edges() {
        row.push(now.iter().position(|e| e == edge).map_or(f64::NAN, |k| s.z[k]));
    }
    row
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// Writes every record with 17 significant digits so the file reads back
/// bit-exactly.
pub fn write_trajectory_csv(path: &Path, scenario: &Scenario, traj: &Trajectory) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(trajectory_header(scenario)).map_err(csv_err)?;
    for r in &traj.records {
        let row = trajectory_row(scenario, traj, r);
        w.write_record(row.iter().map(|x| format!("{x:.16e}"))).map_err(csv_err)?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn read_trajectory_csv(path: &Path) -> std::io::Result<TrajectoryTable> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok(TrajectoryTable { header, rows })
}

/// Rebuilds a state from one trajectory row, starting from the scenario's
/// initial state for anything the row does not carry. Voltages are taken as
/// written; call `resolve_algebraic` to make them consistent.
pub fn state_from_row(scenario: &Scenario, header: &[String], row: &[f64]) -> Result<SystemState, String> {
    if header.len() != row.len() {
        return Err(format!("row has {} fields, header {}", row.len(), header.len()));
    }
    let mut state = scenario.initial.clone();
    let known = trajectory_header(scenario);
    for (name, &x) in header.iter().zip(row) {
        let Some(k) = known.iter().position(|h| h == name) else {
            return Err(format!("unknown column {name:?}"));
        };
        set_field(scenario, &mut state, k, x);
    }
    Ok(state)
}

fn set_field(scenario: &Scenario, s: &mut SystemState, mut k: usize, x: f64) {
    if k == 0 {
        s.time = x;
        return;
    }
    k -= 1;
    let n_bus = scenario.labels.len();
    if k < 3 * n_bus {
        let alg = &mut s.alg;
        [&mut alg.theta, &mut alg.v, &mut alg.omega_tilde][k % 3][k / 3] = x;
        return;
    }
    k -= 3 * n_bus;
    let n_gen = s.machines.len();
    if k < 6 * n_gen {
        let m = &mut s.machines[k / 6];
        match k % 6 {
            0 => m.delta = x,
            1 => m.omega = x,
            2 => m.eq_p = x,
            3 => m.pg = x,
            4 => {}
            _ => m.ef = x,
        }
        return;
    }
    k -= 6 * n_gen;
    let n_unit = s.controllers.len();
    if k < 4 * n_unit {
        let c = &mut s.controllers[k / 4];
        *[&mut c.mu, &mut c.gamma_minus, &mut c.gamma_plus, &mut c.agc_ref][k % 4] = x;
        return;
    }
    k -= 4 * n_unit;
    if let Some(z) = s.z.get_mut(k) {
        if x.is_finite() {
            *z = x;
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitDispatch {
    pub bus: usize,
    pub simulated_mw: f64,
    pub oracle_mw: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DispatchSummary {
    pub demand_mw: f64,
    pub marginal_cost: f64,
    pub max_rel_error: f64,
    pub units: Vec<UnitDispatch>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonitorExtremes {
    pub samples: usize,
    pub max_kkt_residual: f64,
    pub max_freq_dev: f64,
    pub hessian_pd_everywhere: bool,
    pub min_hessian_eig: f64,
    pub max_lyapunov: Option<f64>,
    /// Share of samples with Ẇ ≤ 1e−6·max|W|, among those where Ẇ exists.
    pub lyapunov_nonincreasing_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub final_time: f64,
    pub converged: bool,
    pub frequency_restored: bool,
    pub certified: bool,
    pub steady_state: SteadyState,
    pub kkt: KktReport,
    pub dispatch: Option<DispatchSummary>,
    pub monitors: Option<MonitorExtremes>,
    /// Effective configuration with every default filled in.
    pub config: ScenarioFile,
}

pub fn lyapunov_nonincreasing_fraction(samples: &[crate::engine::MonitorSample]) -> Option<f64> {
    let w_max = samples.iter().filter_map(|m| m.lyapunov_w).fold(0.0, |a: f64, w| a.max(w.abs()));
    let slopes: Vec<f64> = samples.iter().filter_map(|m| m.lyapunov_wdot).collect();
    if slopes.is_empty() {
        return None;
    }
    let ok = slopes.iter().filter(|&&d| d <= 1e-6 * w_max).count();
    Some(ok as f64 / slopes.len() as f64)
}

pub fn summarize(scenario: &Scenario, outcome: &RunOutcome) -> Summary {
    let base = scenario.system.net.base_mva();
    let sys = outcome.trajectory.final_system();
    let dispatch = outcome.dispatch.as_ref().map(|d| DispatchSummary {
        demand_mw: d.demand * base,
        marginal_cost: -d.oracle.lambda / base,
        max_rel_error: d.max_rel_error,
        units: d
            .units
            .iter()
            .zip(d.simulated.iter().zip(&d.oracle.pg))
            .map(|(&k, (s, o))| UnitDispatch {
                bus: scenario.label(sys.generators[sys.units[k].machine].bus),
                simulated_mw: s * base,
                oracle_mw: o * base,
            })
            .collect(),
    });
    let m = &outcome.monitors;
    let monitors = (!m.is_empty()).then(|| MonitorExtremes {
        samples: m.len(),
        max_kkt_residual: m.iter().map(|s| s.kkt_residual).fold(0.0, f64::max),
        max_freq_dev: m.iter().map(|s| s.max_freq_dev).fold(0.0, f64::max),
        hessian_pd_everywhere: m.iter().all(|s| s.hessian_pd),
        min_hessian_eig: m.iter().filter_map(|s| s.hessian_min_eig).fold(f64::INFINITY, f64::min),
        max_lyapunov: m.iter().filter_map(|s| s.lyapunov_w).reduce(f64::max),
        lyapunov_nonincreasing_fraction: lyapunov_nonincreasing_fraction(m),
    });
    Summary {
        scenario: scenario.file.name.clone(),
        final_time: outcome.trajectory.last().state.time,
        converged: outcome.steady.converged,
        frequency_restored: outcome.frequency_restored,
        certified: outcome.certified(scenario.file.sim.kkt_tol),
        steady_state: outcome.steady.clone(),
        kkt: outcome.kkt,
        dispatch,
        monitors,
        config: scenario.file.clone(),
    }
}

pub fn write_summary(path: &Path, summary: &Summary) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(summary).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}
