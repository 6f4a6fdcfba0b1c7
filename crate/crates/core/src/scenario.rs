//! Scenario documents: a single JSON file describing the grid, machines,
//! controller, events and run settings. Quantities are in MW / MVAr and
//! external bus numbers here; everything is converted to per-unit and bus
//! indices when the scenario is built.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{AgcConfig, ControllerGains, CostFunction, Variant};
use crate::dispatch::KktReport;
use crate::dispatch::{check_a3, solve_sfc, DispatchProblem, Limits};
use crate::engine::{
    detect_steady_state, evaluate_monitors, initialize, kkt_at, run, run_derived_dispatch, ControllableUnit,
    DispatchComparison, Event, EventKind, Generator, MonitorOptions, MonitorSample, PowerFlowTargets, RunSettings,
    SteadyState, System, SystemState, Trajectory,
};
use crate::error::{ScenarioError, SimError};
use crate::machines::{MachineParams, Setpoints};
use crate::network::{check_connectivity, Bus, BusKind, Line, NetworkModel, VoltageOptions};

/// Nominal system frequency, Hz.
pub const SYSTEM_HZ: f64 = 60.0;

fn d_base_mva() -> f64 {
    100.0
}
fn d_bus_damping() -> f64 {
    2.0
}
fn d_t() -> f64 {
    0.5
}
fn d_k_omega() -> f64 {
    2.0
}
fn d_one() -> f64 {
    1.0
}
fn d_v_set() -> f64 {
    1.0
}
fn d_k_gamma() -> f64 {
    20.0
}
fn d_k_f() -> f64 {
    9.0
}
fn d_dt() -> f64 {
    0.002
}
fn d_t_end() -> f64 {
    60.0
}
fn d_record_every() -> f64 {
    0.01
}
fn d_omega_bound() -> f64 {
    10.0
}
fn d_v_min() -> f64 {
    0.2
}
fn d_steady_window() -> f64 {
    5.0
}
fn d_tol() -> f64 {
    1e-6
}
fn d_freq_tol() -> f64 {
    1e-3
}
fn d_eig_every() -> usize {
    50
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub network: NetworkSection,
    pub machines: Vec<MachineEntry>,
    pub controller: ControllerSection,
    #[serde(default)]
    pub events: Vec<EventEntry>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "d_base_mva")]
    pub base_mva: f64,
    /// D̃ for buses that do not set their own.
    #[serde(default = "d_bus_damping")]
    pub bus_damping: f64,
    pub buses: Vec<BusEntry>,
    pub lines: Vec<LineEntry>,
    #[serde(default)]
    pub comm_edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusEntry {
    pub bus: usize,
    #[serde(default)]
    pub p_mw: f64,
    #[serde(default)]
    pub q_mvar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub from: usize,
    pub to: usize,
    /// Series reactance, p.u. on the system base.
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineEntry {
    pub bus: usize,
    /// Inertia constant H (s); M = 2H/ω_s.
    pub h: f64,
    #[serde(default = "d_one")]
    pub d: f64,
    pub x_d: f64,
    pub x_dp: f64,
    pub t_d0p: f64,
    #[serde(default = "d_t")]
    pub t: f64,
    #[serde(default = "d_k_omega")]
    pub k_omega: f64,
    #[serde(default = "d_one")]
    pub k_e: f64,
    /// Scheduled output of a droop unit. Controllable units are dispatched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pg_mw: Option<f64>,
    #[serde(default = "d_v_set")]
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub gains: GainsEntry,
    /// One entry per controllable generator, MW units.
    pub costs: Vec<CostEntry>,
    #[serde(default)]
    pub agc: AgcEntry,
}

fn default_variant() -> Variant {
    Variant::Measured
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsEntry {
    #[serde(default = "d_one")]
    pub k_pg: f64,
    #[serde(default = "d_one")]
    pub k_mu: f64,
    #[serde(default = "d_one")]
    pub k_z: f64,
    #[serde(default = "d_k_gamma")]
    pub k_gamma: f64,
    /// Defaults to 3/l per unit, l the per-unit cost curvature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl Default for GainsEntry {
    fn default() -> Self {
        Self { k_pg: 1.0, k_mu: 1.0, k_z: 1.0, k_gamma: d_k_gamma(), tau: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostEntry {
    pub bus: usize,
    /// Curvature, $/MW² (cost ½aP² + bP with P in MW).
    pub a: f64,
    /// Linear coefficient, $/MW.
    pub b: f64,
    #[serde(default)]
    pub p_min_mw: f64,
    pub p_max_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgcEntry {
    #[serde(default = "d_k_f")]
    pub k_f: f64,
    /// Participation factors in cost-entry order; equal split if omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shares: Option<Vec<f64>>,
}

impl Default for AgcEntry {
    fn default() -> Self {
        Self { k_f: d_k_f(), shares: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventEntry {
    LoadStep {
        at: f64,
        bus: usize,
        #[serde(default)]
        dp_mw: f64,
        #[serde(default)]
        dq_mvar: f64,
    },
    GeneratorTrip {
        at: f64,
        bus: usize,
    },
    LineTrip {
        at: f64,
        from: usize,
        to: usize,
    },
    LineReclose {
        at: f64,
        from: usize,
        to: usize,
    },
}

impl EventEntry {
    pub fn at(&self) -> f64 {
        match *self {
            EventEntry::LoadStep { at, .. }
            | EventEntry::GeneratorTrip { at, .. }
            | EventEntry::LineTrip { at, .. }
            | EventEntry::LineReclose { at, .. } => at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_t_end")]
    pub t_end: f64,
    #[serde(default = "d_record_every")]
    pub record_every: f64,
    #[serde(default = "d_omega_bound")]
    pub omega_bound: f64,
    #[serde(default = "d_v_min")]
    pub v_min: f64,
    #[serde(default = "d_steady_window")]
    pub steady_window: f64,
    #[serde(default = "d_tol")]
    pub steady_tol: f64,
    /// Frequency bound used for the run verdict, rad/s.
    #[serde(default = "d_freq_tol")]
    pub freq_tol: f64,
    #[serde(default = "d_tol")]
    pub kkt_tol: f64,
    #[serde(default = "d_eig_every")]
    pub hessian_eig_every: usize,
    #[serde(default = "d_true")]
    pub monitors: bool,
    #[serde(default)]
    pub voltage: VoltageOptions,
}

impl Default for SimSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotChannel {
    Frequency,
    Pg,
    Voltage,
    Mu,
    Z,
}

impl PlotChannel {
    pub const ALL: [PlotChannel; 5] =
        [PlotChannel::Frequency, PlotChannel::Pg, PlotChannel::Voltage, PlotChannel::Mu, PlotChannel::Z];

    pub fn name(self) -> &'static str {
        match self {
            PlotChannel::Frequency => "frequency",
            PlotChannel::Pg => "pg",
            PlotChannel::Voltage => "voltage",
            PlotChannel::Mu => "mu",
            PlotChannel::Z => "z",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "d_true")]
    pub csv: bool,
    #[serde(default = "all_channels")]
    pub plots: Vec<PlotChannel>,
}

fn all_channels() -> Vec<PlotChannel> {
    PlotChannel::ALL.to_vec()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { csv: true, plots: all_channels() }
    }
}

impl ScenarioFile {
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ScenarioError::Schema { path: format!("{origin}:{path}"), message: e.into_inner().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text, &path.display().to_string())
    }
}

/// Scenarios shipped with the crate, by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "ne39" => Some(include_str!("../scenarios/ne39.json")),
        "ne39_gen_trip" => Some(include_str!("../scenarios/ne39_gen_trip.json")),
        "ne39_line_trip" => Some(include_str!("../scenarios/ne39_line_trip.json")),
        _ => None,
    }
}

pub const BUNDLED: [&str; 3] = ["ne39", "ne39_gen_trip", "ne39_line_trip"];

pub fn load_bundled(name: &str) -> Result<Scenario, ScenarioError> {
    let text = bundled(name).ok_or_else(|| ScenarioError::Schema {
        path: name.into(),
        message: format!("no bundled scenario named {name:?}"),
    })?;
    Scenario::build(ScenarioFile::from_json_str(text, name)?)
}

/// Reads, defaults and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    Scenario::build(ScenarioFile::load(path)?)
}

/// A validated scenario ready to run: the effective configuration plus the
/// initialized system.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub system: System,
    pub initial: SystemState,
    pub events: Vec<Event>,
    pub settings: RunSettings,
    /// Bus labels by index, generator and unit bus indices.
    pub labels: Vec<usize>,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema { path: path.into(), message: message.into() }
}

fn validation(assumption: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { assumption: assumption.into(), message: message.into() }
}

fn positive(path: &str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(schema(path, format!("must be positive, got {v}")))
    }
}

impl Scenario {
    pub fn build(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let net_s = &file.network;
        if net_s.buses.is_empty() {
            return Err(schema("network.buses", "network has no buses"));
        }
        positive("network.base_mva", net_s.base_mva)?;
        let base = net_s.base_mva;
        let s = &file.sim;
        positive("sim.dt", s.dt)?;
        positive("sim.t_end", s.t_end)?;
        positive("sim.record_every", s.record_every)?;

        let mut index: HashMap<usize, usize> = HashMap::new();
        for (i, b) in net_s.buses.iter().enumerate() {
            if index.insert(b.bus, i).is_some() {
                return Err(schema(format!("network.buses[{i}].bus"), format!("duplicate bus {}", b.bus)));
            }
        }
        let bus_index = |label: usize, path: String| {
            index.get(&label).copied().ok_or_else(|| schema(path, format!("unknown bus {label}")))
        };

        let mut machine_at = HashMap::new();
        for (g, m) in file.machines.iter().enumerate() {
            let path = format!("machines[{g}]");
            let i = bus_index(m.bus, format!("{path}.bus"))?;
            if machine_at.insert(i, g).is_some() {
                return Err(schema(format!("{path}.bus"), format!("second machine at bus {}", m.bus)));
            }
        }
        let mut cost_of = HashMap::new();
        for (k, c) in file.controller.costs.iter().enumerate() {
            let path = format!("controller.costs[{k}]");
            let i = bus_index(c.bus, format!("{path}.bus"))?;
            if !machine_at.contains_key(&i) {
                return Err(schema(format!("{path}.bus"), format!("no machine at bus {}", c.bus)));
            }
            positive(&format!("{path}.a"), c.a)?;
            if c.p_min_mw > c.p_max_mw {
                return Err(schema(format!("{path}.p_max_mw"), "below p_min_mw"));
            }
            if cost_of.insert(i, k).is_some() {
                return Err(schema(format!("{path}.bus"), format!("second cost entry for bus {}", c.bus)));
            }
        }

        let buses: Vec<Bus> = net_s
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| Bus {
                label: b.bus,
                kind: match (machine_at.contains_key(&i), cost_of.contains_key(&i)) {
                    (_, true) => BusKind::ControllableGenerator,
                    (true, false) => BusKind::UncontrollableGenerator,
                    _ => BusKind::Load,
                },
                p: b.p_mw / base,
                q: b.q_mvar / base,
                damping: b.damping.unwrap_or(net_s.bus_damping),
            })
            .collect();
        let mut lines = Vec::new();
        for (k, l) in net_s.lines.iter().enumerate() {
            let path = format!("network.lines[{k}]");
            positive(&format!("{path}.x"), l.x)?;
            lines.push(Line {
                from: bus_index(l.from, format!("{path}.from"))?,
                to: bus_index(l.to, format!("{path}.to"))?,
                b: 1.0 / l.x,
                in_service: true,
            });
        }
        let mut comm = Vec::new();
        for (k, &[a, b]) in net_s.comm_edges.iter().enumerate() {
            let path = format!("network.comm_edges[{k}]");
            comm.push((bus_index(a, path.clone())?, bus_index(b, path)?));
        }
        let net = NetworkModel::new(buses, lines, comm, base).map_err(|e| schema("network", e.to_string()))?;
        let c = check_connectivity(&net);
        if !c.power_connected {
            return Err(validation("connectivity", "power network is not connected"));
        }
        if !cost_of.is_empty() && !c.comm_connected {
            return Err(validation("A1", "communication graph over the controllable generators is not connected"));
        }

        // Machines, in file order.
        let omega_s = 2.0 * std::f64::consts::PI * SYSTEM_HZ;
        let mut generators = Vec::new();
        let mut targets = PowerFlowTargets { pg: Vec::new(), v_set: Vec::new() };
        for (g, m) in file.machines.iter().enumerate() {
            let i = index[&m.bus];
            let cost = cost_of.get(&i).map(|&k| &file.controller.costs[k]);
            let path = format!("machines[{g}]");
            for (field, v) in [("h", m.h), ("d", m.d), ("t_d0p", m.t_d0p), ("t", m.t), ("v_set", m.v_set)] {
                positive(&format!("{path}.{field}"), v)?;
            }
            let (p_min, p_max) = match cost {
                Some(c) => (c.p_min_mw / base, c.p_max_mw / base),
                None => (f64::NEG_INFINITY, f64::INFINITY),
            };
            if cost.is_none() && m.pg_mw.is_none() {
                return Err(schema(format!("{path}.pg_mw"), "required for a generator without a cost entry"));
            }
            let params = MachineParams {
                m: 2.0 * m.h / omega_s,
                d: m.d,
                t_d0p: m.t_d0p,
                t: m.t,
                x_d: m.x_d,
                x_dp: m.x_dp,
                controllable: cost.is_some(),
                p_min,
                p_max,
                k_omega: m.k_omega,
                k_e: m.k_e,
                setpoints: Setpoints::default(),
            }
            .checked(i)
            .map_err(|e| schema(path.clone(), e.to_string()))?;
            generators.push(Generator { bus: i, params, online: true });
            targets.pg.push(m.pg_mw.unwrap_or(0.0) / base);
            targets.v_set.push(m.v_set);
        }

        // Units follow the cost-entry order.
        let gains_s = file.controller.gains;
        let mut units = Vec::new();
        let mut limits = Vec::new();
        for (k, c) in file.controller.costs.iter().enumerate() {
            let machine = machine_at[&index[&c.bus]];
            let cost =
                CostFunction::new(c.a * base * base, c.b * base).map_err(|e| schema("controller", e.to_string()))?;
            let gains = ControllerGains {
                k_pg: gains_s.k_pg,
                k_mu: gains_s.k_mu,
                k_z: gains_s.k_z,
                k_gamma: gains_s.k_gamma,
                tau: gains_s.tau.unwrap_or(3.0 / cost.lipschitz()),
            };
            gains.validate(&cost).map_err(|e| schema(format!("controller.costs[{k}]"), e.to_string()))?;
            limits.push(Limits { p_min: c.p_min_mw / base, p_max: c.p_max_mw / base });
            units.push(ControllableUnit { machine, cost, gains, p_hat_base: 0.0 });
        }

        let events = convert_events(&file, &index)?;
        check_demand_schedule(&net, &generators, &targets, &units, &events, base)?;

        // Initial dispatch of the controllable units at the starting demand.
        if !units.is_empty() {
            let demand = net.buses().iter().map(|b| b.p).sum::<f64>()
                - generators
                    .iter()
                    .zip(&targets.pg)
                    .filter(|(g, _)| !g.params.controllable)
                    .map(|(_, p)| p)
                    .sum::<f64>();
            let problem = DispatchProblem::new(units.iter().map(|u| u.cost).collect(), limits.clone(), demand)
                .map_err(|e| validation("A3", e.to_string()))?;
            let sol = solve_sfc(&problem);
            for (u, p) in units.iter().zip(&sol.pg) {
                targets.pg[u.machine] = *p;
            }
        }

        let variant = file.controller.variant;
        let agc = if units.is_empty() {
            None
        } else {
            let shares =
                file.controller.agc.shares.clone().unwrap_or_else(|| vec![1.0 / units.len() as f64; units.len()]);
            if shares.len() != units.len() {
                return Err(schema("controller.agc.shares", "one share per cost entry"));
            }
            Some(AgcConfig::new(file.controller.agc.k_f, shares).map_err(|e| schema("controller.agc", e.to_string()))?)
        };
        let system = System::new(net, generators, units, variant, agc, s.voltage);
        let (system, initial) =
            initialize(system, &targets).map_err(|e| validation("initial power flow", e.to_string()))?;
        let settings = RunSettings {
            dt: s.dt,
            t_end: s.t_end,
            record_every: s.record_every,
            omega_bound: s.omega_bound,
            v_min: s.v_min,
        };
        let labels = file.network.buses.iter().map(|b| b.bus).collect();
        Ok(Self { file, system, initial, events, settings, labels })
    }

    /// Human-readable name of a bus index.
    pub fn label(&self, bus: usize) -> usize {
        self.labels[bus]
    }
}

fn convert_events(file: &ScenarioFile, index: &HashMap<usize, usize>) -> Result<Vec<Event>, ScenarioError> {
    let base = file.network.base_mva;
    let mut out = Vec::new();
    for (k, e) in file.events.iter().enumerate() {
        let path = format!("events[{k}]");
        let at = e.at();
        if !(at >= 0.0) {
            return Err(schema(format!("{path}.at"), "event times must be nonnegative"));
        }
        let bus = |label: usize, field: &str| {
            index.get(&label).copied().ok_or_else(|| schema(format!("{path}.{field}"), format!("unknown bus {label}")))
        };
        let kind = match *e {
            EventEntry::LoadStep { bus: b, dp_mw, dq_mvar, .. } => {
                EventKind::LoadStep { bus: bus(b, "bus")?, dp: dp_mw / base, dq: dq_mvar / base }
            }
            EventEntry::GeneratorTrip { bus: b, .. } => EventKind::GeneratorTrip { bus: bus(b, "bus")? },
            EventEntry::LineTrip { from, to, .. } => {
                EventKind::LineTrip { from: bus(from, "from")?, to: bus(to, "to")? }
            }
            EventEntry::LineReclose { from, to, .. } => {
                EventKind::LineReclose { from: bus(from, "from")?, to: bus(to, "to")? }
            }
        };
        out.push(Event { at, kind });
    }
    out.sort_by(|a, b| a.at.total_cmp(&b.at));
    // A reclose needs an earlier trip of the same line.
    let mut open: Vec<(usize, usize)> = Vec::new();
    for e in &out {
        match e.kind {
            EventKind::LineTrip { from, to } => open.push((from.min(to), from.max(to))),
            EventKind::LineReclose { from, to } => {
                let key = (from.min(to), from.max(to));
                let Some(p) = open.iter().position(|&x| x == key) else {
                    return Err(schema("events", format!("reclose at t={} without a preceding trip", e.at)));
                };
                open.remove(p);
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Checks capacity feasibility of the controllable units before and after
/// every event.
fn check_demand_schedule(
    net: &NetworkModel,
    generators: &[Generator],
    targets: &PowerFlowTargets,
    units: &[ControllableUnit],
    events: &[Event],
    base: f64,
) -> Result<(), ScenarioError> {
    if units.is_empty() {
        return Ok(());
    }
    let mut load: f64 = net.buses().iter().map(|b| b.p).sum();
    let mut online = vec![true; generators.len()];
    let check = |load: f64, online: &[bool], when: &str| -> Result<(), ScenarioError> {
        let droop: f64 = (0..generators.len())
            .filter(|&g| online[g] && !generators[g].params.controllable)
            .map(|g| targets.pg[g])
            .sum();
        let limits: Vec<Limits> = units
            .iter()
            .filter(|u| online[u.machine])
            .map(|u| Limits { p_min: generators[u.machine].params.p_min, p_max: generators[u.machine].params.p_max })
            .collect();
        let demand = load - droop;
        if !check_a3(&limits, demand).feasible {
            let hi: f64 = limits.iter().map(|l| l.p_max).sum();
            return Err(validation(
                "A3",
                format!(
                    "{when}: controllable demand {:.1} MW outside capacity range [{:.1}, {:.1}] MW",
                    demand * base,
                    limits.iter().map(|l| l.p_min).sum::<f64>() * base,
                    hi * base
                ),
            ));
        }
        Ok(())
    };
    check(load, &online, "initial state")?;
    for e in events {
        match e.kind {
            EventKind::LoadStep { dp, .. } => load += dp,
            EventKind::GeneratorTrip { bus } => {
                if let Some(g) = generators.iter().position(|g| g.bus == bus) {
                    online[g] = false;
                }
            }
            _ => continue,
        }
        check(load, &online, &format!("after the event at t={}", e.at))?;
    }
    Ok(())
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub steady: SteadyState,
    /// Frequency restored within `sim.freq_tol` at the end of the run.
    pub frequency_restored: bool,
    pub kkt: KktReport,
    pub dispatch: Option<DispatchComparison>,
    pub monitors: Vec<MonitorSample>,
}

impl RunOutcome {
    /// Converged and the steady state satisfies the optimality conditions.
    pub fn certified(&self, kkt_tol: f64) -> bool {
        self.steady.converged && self.frequency_restored && self.kkt.max < kkt_tol
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunOutcome, SimError> {
    let trajectory = run(scenario.system.clone(), scenario.initial.clone(), &scenario.events, &scenario.settings)?;
    analyze(scenario, trajectory)
}

/// Steady-state detection, certification and monitors for a finished run.
pub fn analyze(scenario: &Scenario, trajectory: Trajectory) -> Result<RunOutcome, SimError> {
    let s = &scenario.file.sim;
    let steady = detect_steady_state(&trajectory, s.steady_window, s.steady_tol);
    let last = trajectory.last();
    let sys = trajectory.system_of(last);
    let frequency_restored = steady.max_omega < s.freq_tol && steady.max_omega_tilde < s.freq_tol;
    let kkt = kkt_at(sys, &steady.equilibrium);
    let dispatch = if sys.units.iter().enumerate().any(|(k, _)| sys.unit_online(k)) {
        Some(run_derived_dispatch(sys, &steady.equilibrium)?)
    } else {
        None
    };
    let monitors = if s.monitors {
        let eq = steady.converged.then_some(&steady.equilibrium);
        evaluate_monitors(&trajectory, eq, &MonitorOptions { hessian_eig_every: s.hessian_eig_every })
    } else {
        Vec::new()
    };
    Ok(RunOutcome { trajectory, steady, frequency_restored, kkt, dispatch, monitors })
}
