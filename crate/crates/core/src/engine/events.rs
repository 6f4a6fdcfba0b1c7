use serde::{Deserialize, Serialize};

use super::{resolve_algebraic, System, SystemState};
use crate::error::{Graph, SimError};
use crate::network::{check_connectivity, BusKind};

/// Discrete disturbance; bus arguments are bus indices, not labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    LoadStep { bus: usize, dp: f64, dq: f64 },
    GeneratorTrip { bus: usize },
    LineTrip { from: usize, to: usize },
    LineReclose { from: usize, to: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Net demand the controllable units must cover: Σp − Σ online P^g* of the
/// droop units.
fn controllable_demand(sys: &System) -> f64 {
    let load: f64 = sys.net.buses().iter().map(|b| b.p).sum();
    let droop: f64 =
        sys.generators.iter().filter(|g| g.online && !g.params.controllable).map(|g| g.params.setpoints.pg_ref).sum();
    load - droop
}

/// Spreads the change in net demand evenly over the online units on top of
/// their initial outputs, so Σp̂ always equals the current net demand.
fn refresh_virtual_loads(sys: &System, state: &mut SystemState) {
    let online: Vec<usize> = (0..sys.units.len()).filter(|&k| sys.unit_online(k)).collect();
    if online.is_empty() {
        return;
    }
    let base: f64 = online.iter().map(|&k| sys.units[k].p_hat_base).sum();
    let share = (controllable_demand(sys) - base) / online.len() as f64;
    for &k in &online {
        state.controllers[k].p_hat = sys.units[k].p_hat_base + share;
    }
}

/// Applies one event and re-solves the algebraic variables under the new
/// topology. Connectivity of both graphs is enforced.
pub fn apply_event(sys: &System, state: &SystemState, event: &Event) -> Result<(System, SystemState), SimError> {
    let time = state.time;
    let not_applicable = |reason: String| SimError::EventNotApplicable { time, reason };
    let mut next = sys.clone();
    let mut st = state.clone();
    match event.kind {
        EventKind::LoadStep { bus, dp, dq } => {
            next.net = sys.net.with_load_change(bus, dp, dq).map_err(|e| not_applicable(e.to_string()))?;
        }
        EventKind::GeneratorTrip { bus } => {
            let g = sys
                .generators
                .iter()
                .position(|g| g.bus == bus && g.online)
                .ok_or_else(|| not_applicable(format!("no online generator at bus index {bus}")))?;
            next.generators[g].online = false;
            next.net = sys.net.without_generator(bus);
            if sys.net.buses()[bus].kind == BusKind::ControllableGenerator {
                let kept: Vec<usize> = sys
                    .net
                    .comm_edges()
                    .iter()
                    .enumerate()
                    .filter(|(_, &(i, j))| i != bus && j != bus)
                    .map(|(e, _)| e)
                    .collect();
                st.z = kept.iter().map(|&e| state.z[e]).collect();
                next.rebuild_topology();
            }
        }
        EventKind::LineTrip { from, to } | EventKind::LineReclose { from, to } => {
            let closing = matches!(event.kind, EventKind::LineReclose { .. });
            let k = sys
                .net
                .line_index(from, to)
                .ok_or_else(|| not_applicable(format!("no line between bus indices {from} and {to}")))?;
            if sys.net.lines()[k].in_service == closing {
                let status = if closing { "already in service" } else { "already open" };
                return Err(not_applicable(format!("line {from}-{to} {status}")));
            }
            next.net = sys.net.with_line_service(k, closing);
        }
    }
    let c = check_connectivity(&next.net);
    if !c.power_connected {
        return Err(SimError::DisconnectedAfterEvent { time, graph: Graph::Power });
    }
    if (0..next.units.len()).any(|k| next.unit_online(k)) && !c.comm_connected {
        return Err(SimError::DisconnectedAfterEvent { time, graph: Graph::Communication });
    }
    refresh_virtual_loads(&next, &mut st);
    resolve_algebraic(&next, &mut st).map_err(|source| SimError::Solve { time, source })?;
    Ok((next, st))
}
