//! Lossless network-preserving grid: topology, line flows, bus balances and
//! the reactive-power voltage solve.
//!
//! Buses are addressed by their position in [`NetworkModel::buses`]; the
//! external bus number (e.g. 39 for the New England slack) is only a label.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Graph, ModelError, SolveError};
use crate::machines::terminal_power;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    ControllableGenerator,
    UncontrollableGenerator,
    Load,
}

impl BusKind {
    pub fn has_generator(self) -> bool {
        !matches!(self, BusKind::Load)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External bus number, used for naming only.
    pub label: usize,
    pub kind: BusKind,
    /// Active load, per-unit.
    pub p: f64,
    /// Reactive load, per-unit.
    pub q: f64,
    /// Frequency-sensitive load coefficient D̃, per-unit power per rad/s.
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series susceptance B_ij = 1/x_ij, per-unit.
    pub b: f64,
    pub in_service: bool,
}

/// Immutable grid description. Event handling produces modified copies.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    comm_edges: Vec<(usize, usize)>,
    base_mva: f64,
    incident: Vec<Vec<usize>>,
}

impl NetworkModel {
    /// Validates local invariants. Connectivity is a separate query
    /// ([`check_connectivity`]) because events may legitimately probe it.
    pub fn new(
        buses: Vec<Bus>,
        lines: Vec<Line>,
        comm_edges: Vec<(usize, usize)>,
        base_mva: f64,
    ) -> Result<Self, ModelError> {
        let n = buses.len();
        for (i, bus) in buses.iter().enumerate() {
            if !(bus.damping > 0.0) {
                return Err(ModelError::NonPositiveDamping { bus: i, damping: bus.damping });
            }
        }
        for line in &lines {
            if line.from >= n {
                return Err(ModelError::UnknownBus(line.from));
            }
            if line.to >= n {
                return Err(ModelError::UnknownBus(line.to));
            }
            if !(line.b > 0.0) {
                return Err(ModelError::NonPositiveSusceptance { from: line.from, to: line.to, b: line.b });
            }
        }
        let mut oriented = Vec::with_capacity(comm_edges.len());
        for &(i, j) in &comm_edges {
            for k in [i, j] {
                if k >= n {
                    return Err(ModelError::UnknownBus(k));
                }
            }
            if i == j
                || buses[i].kind != BusKind::ControllableGenerator
                || buses[j].kind != BusKind::ControllableGenerator
            {
                return Err(ModelError::CommEdgeOffController(i, j));
            }
            oriented.push((i.min(j), i.max(j)));
        }
        let mut incident = vec![Vec::new(); n];
        for (k, line) in lines.iter().enumerate() {
            incident[line.from].push(k);
            incident[line.to].push(k);
        }
        Ok(Self { buses, lines, comm_edges: oriented, base_mva, incident })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// Undirected communication edges, each stored once as `(lower, higher)`.
    pub fn comm_edges(&self) -> &[(usize, usize)] {
        &self.comm_edges
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Line indices touching `bus`, in or out of service.
    pub fn incident_lines(&self, bus: usize) -> &[usize] {
        &self.incident[bus]
    }

    pub fn bus_by_label(&self, label: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.label == label)
    }

    pub fn line_index(&self, i: usize, j: usize) -> Option<usize> {
        self.lines.iter().position(|l| (l.from == i && l.to == j) || (l.from == j && l.to == i))
    }

    /// Sum of in-service susceptances at `bus` (the network part of B_ii).
    pub fn self_susceptance(&self, bus: usize) -> f64 {
        self.incident[bus].iter().map(|&k| &self.lines[k]).filter(|l| l.in_service).map(|l| l.b).sum()
    }

    pub fn with_load_change(&self, bus: usize, dp: f64, dq: f64) -> Result<Self, ModelError> {
        if bus >= self.buses.len() {
            return Err(ModelError::UnknownBus(bus));
        }
        let mut next = self.clone();
        next.buses[bus].p += dp;
        next.buses[bus].q += dq;
        Ok(next)
    }

    /// Toggles a line's service flag; the susceptance itself is untouched so a
    /// reclose is bit-exact.
    pub fn with_line_service(&self, line: usize, in_service: bool) -> Self {
        let mut next = self.clone();
        next.lines[line].in_service = in_service;
        next
    }

    /// Turns a generator bus into a pure-load bus and drops its comm edges.
    pub fn without_generator(&self, bus: usize) -> Self {
        let mut next = self.clone();
        next.buses[bus].kind = BusKind::Load;
        next.comm_edges.retain(|&(i, j)| i != bus && j != bus);
        next
    }
}

/// Algebraic variables of every bus at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraicState {
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    pub omega_tilde: Vec<f64>,
}

impl AlgebraicState {
    pub fn flat(n: usize) -> Self {
        Self { theta: vec![0.0; n], v: vec![1.0; n], omega_tilde: vec![0.0; n] }
    }
}

/// Flows on one line in both orientations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LineFlow {
    pub p_ij: f64,
    pub p_ji: f64,
    pub q_ij: f64,
    pub q_ji: f64,
}

/// Power delivered by a machine into its terminal bus.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Injection {
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
}

/// Internal EMF of an online machine as seen by the voltage solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emf {
    pub bus: usize,
    pub e: f64,
    pub delta: f64,
    pub x_dp: f64,
}

fn branch_flow(b: f64, vi: f64, vj: f64, dtheta: f64) -> (f64, f64) {
    let (s, c) = dtheta.sin_cos();
    (vi * vj * b * s, b * vi * vi - vi * vj * b * c)
}

pub fn line_flows(net: &NetworkModel, alg: &AlgebraicState) -> Vec<LineFlow> {
    net.lines
        .iter()
        .map(|l| {
            if !l.in_service {
                return LineFlow::default();
            }
            let (i, j) = (l.from, l.to);
            let d = alg.theta[i] - alg.theta[j];
            let (p_ij, q_ij) = branch_flow(l.b, alg.v[i], alg.v[j], d);
            let (p_ji, q_ji) = branch_flow(l.b, alg.v[j], alg.v[i], -d);
            LineFlow { p_ij, p_ji, q_ij, q_ji }
        })
        .collect()
}

/// Per-bus active and reactive balance, excluding the D̃ω̃ term.
/// `injections` is indexed by bus; entries on pure-load buses are ignored.
pub fn bus_power_mismatch(net: &NetworkModel, alg: &AlgebraicState, injections: &[Injection]) -> Mismatch {
    let n = net.n_buses();
    assert_eq!(injections.len(), n, "one injection slot per bus");
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    for (i, bus) in net.buses.iter().enumerate() {
        if bus.kind.has_generator() {
            dp[i] = injections[i].p;
            dq[i] = injections[i].q;
        }
        dp[i] -= bus.p;
        dq[i] -= bus.q;
    }
    for (l, f) in net.lines.iter().zip(line_flows(net, alg)) {
        dp[l.from] -= f.p_ij;
        dq[l.from] -= f.q_ij;
        dp[l.to] -= f.p_ji;
        dq[l.to] -= f.q_ji;
    }
    Mismatch { dp, dq }
}

/// ω̃_i = ΔP_i / D̃_i.
pub fn bus_frequencies(net: &NetworkModel, dp: &[f64]) -> Vec<f64> {
    net.buses.iter().zip(dp).map(|(b, &d)| d / b.damping).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoltageOptions {
    pub tol_q: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for VoltageOptions {
    fn default() -> Self {
        Self { tol_q: 1e-9, max_iter: 50, max_halvings: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution {
    pub v: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Reactive residual ΔQ(V) and, optionally, its Jacobian in V.
fn reactive_system(
    net: &NetworkModel,
    theta: &[f64],
    sources: &[Emf],
    v: &[f64],
    jac: Option<&mut DMatrix<f64>>,
) -> DVector<f64> {
    let n = net.n_buses();
    let mut r = DVector::from_iterator(n, net.buses.iter().map(|b| -b.q));
    let mut jac = jac;
    if let Some(j) = jac.as_deref_mut() {
        j.fill(0.0);
    }
    for s in sources {
        let i = s.bus;
        let (_, q) = terminal_power(s.e, s.delta, s.x_dp, v[i], theta[i]);
        r[i] += q;
        if let Some(j) = jac.as_deref_mut() {
            j[(i, i)] += (s.e * (s.delta - theta[i]).cos() - 2.0 * v[i]) / s.x_dp;
        }
    }
    for l in net.lines.iter().filter(|l| l.in_service) {
        let (a, b) = (l.from, l.to);
        let c = (theta[a] - theta[b]).cos();
        r[a] -= l.b * v[a] * v[a] - v[a] * v[b] * l.b * c;
        r[b] -= l.b * v[b] * v[b] - v[a] * v[b] * l.b * c;
        if let Some(j) = jac.as_deref_mut() {
            j[(a, a)] -= 2.0 * l.b * v[a] - v[b] * l.b * c;
            j[(b, b)] -= 2.0 * l.b * v[b] - v[a] * l.b * c;
            j[(a, b)] += v[a] * l.b * c;
            j[(b, a)] += v[b] * l.b * c;
        }
    }
    r
}

/// Maximum absolute reactive balance residual at the given voltages.
pub fn reactive_residual(net: &NetworkModel, theta: &[f64], sources: &[Emf], v: &[f64]) -> f64 {
    reactive_system(net, theta, sources, v, None).amax()
}

/// Newton solve of the reactive balances for V with the angles and machine
/// EMFs frozen. Starts from `v0` (falls back to flat 1.0 p.u. entries where
/// `v0` is nonpositive). A final chord step with the last factorization
/// polishes the converged iterate to near machine precision.
pub fn solve_voltages(
    net: &NetworkModel,
    theta: &[f64],
    sources: &[Emf],
    v0: &[f64],
    opts: &VoltageOptions,
) -> Result<VoltageSolution, SolveError> {
    let n = net.n_buses();
    let mut v: Vec<f64> = v0.iter().map(|&x| if x > 0.0 { x } else { 1.0 }).collect();
    let mut jac = DMatrix::zeros(n, n);
    let mut r = reactive_system(net, theta, sources, &v, Some(&mut jac));
    let mut residual = r.amax();
    let mut iterations = 0;
    let mut last_lu = None;
    while residual >= opts.tol_q {
        if iterations == opts.max_iter || !residual.is_finite() {
            return Err(SolveError::NonConvergence { iterations, residual });
        }
        iterations += 1;
        let lu = jac.clone().lu();
        let step = lu.solve(&(-&r)).ok_or(SolveError::NonConvergence { iterations, residual })?;
        let mut scale = 1.0;
        let mut halvings = 0;
        let trial = loop {
            let trial: Vec<f64> = v.iter().zip(step.iter()).map(|(x, d)| x + scale * d).collect();
            match trial.iter().position(|&x| x <= 0.0) {
                None => {
                    let rt = reactive_system(net, theta, sources, &trial, None).amax();
                    if rt < residual || halvings == opts.max_halvings {
                        break trial;
                    }
                }
                Some(bus) if halvings == opts.max_halvings => {
                    return Err(SolveError::NegativeVoltageIterate { bus });
                }
                Some(_) => {}
            }
            scale *= 0.5;
            halvings += 1;
        };
        v = trial;
        r = reactive_system(net, theta, sources, &v, Some(&mut jac));
        residual = r.amax();
        last_lu = Some(lu);
    }
    if let Some(lu) = last_lu {
        if let Some(step) = lu.solve(&(-&r)) {
            let polished: Vec<f64> = v.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            let rp = reactive_system(net, theta, sources, &polished, None).amax();
            if polished.iter().all(|&x| x > 0.0) && rp <= residual {
                v = polished;
                residual = rp;
            }
        }
    }
    Ok(VoltageSolution { v, iterations, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connectivity {
    pub power_connected: bool,
    pub comm_connected: bool,
}

fn reachable_all(nodes: &[usize], neighbors: impl Fn(usize) -> Vec<usize>, n: usize) -> bool {
    let Some(&start) = nodes.first() else {
        return false;
    };
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for w in neighbors(u) {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    nodes.iter().all(|&k| seen[k])
}

/// Breadth-first reachability over in-service lines and over comm edges.
/// The comm graph's node set is every controllable-generator bus.
pub fn check_connectivity(net: &NetworkModel) -> Connectivity {
    let n = net.n_buses();
    let all: Vec<usize> = (0..n).collect();
    let power_connected = reachable_all(
        &all,
        |u| {
            net.incident[u]
                .iter()
                .map(|&k| &net.lines[k])
                .filter(|l| l.in_service)
                .map(|l| if l.from == u { l.to } else { l.from })
                .collect()
        },
        n,
    );
    let controllers: Vec<usize> = (0..n).filter(|&i| net.buses[i].kind == BusKind::ControllableGenerator).collect();
    let comm_connected = reachable_all(
        &controllers,
        |u| {
            net.comm_edges
                .iter()
                .filter_map(|&(i, j)| {
                    if i == u {
                        Some(j)
                    } else if j == u {
                        Some(i)
                    } else {
                        None
                    }
                })
                .collect()
        },
        n,
    );
    Connectivity { power_connected, comm_connected }
}

/// Errors with the offending graph unless both graphs are connected.
pub fn require_connected(net: &NetworkModel) -> Result<(), ModelError> {
    let c = check_connectivity(net);
    if !c.power_connected {
        return Err(ModelError::Disconnected(Graph::Power));
    }
    if !c.comm_connected {
        return Err(ModelError::Disconnected(Graph::Communication));
    }
    Ok(())
}
