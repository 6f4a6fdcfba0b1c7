//! Third-order synchronous machine with a first-order governor-turbine and an
//! exciter state, plus the droop and excitation laws used for the
//! non-optimized channels and a trajectory audit of their passivity.

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, ModelError};

/// Steady-state references for the droop and excitation laws.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Setpoints {
    pub omega_ref: f64,
    pub pg_ref: f64,
    pub ef_ref: f64,
    pub eq_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    /// Inertia, s² p.u. power per rad.
    pub m: f64,
    /// Mechanical damping, p.u. power per rad/s.
    pub d: f64,
    pub t_d0p: f64,
    /// Turbine time constant, s.
    pub t: f64,
    pub x_d: f64,
    pub x_dp: f64,
    pub controllable: bool,
    pub p_min: f64,
    pub p_max: f64,
    pub k_omega: f64,
    pub k_e: f64,
    pub setpoints: Setpoints,
}

impl MachineParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("M", self.m),
            ("D", self.d),
            ("T'd0", self.t_d0p),
            ("T", self.t),
            ("x'd", self.x_dp),
            ("k_omega", self.k_omega),
            ("k_E", self.k_e),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.x_d > self.x_dp) {
            return Err(format!("x_d={} must exceed x'd={}", self.x_d, self.x_dp));
        }
        if self.p_min > self.p_max {
            return Err(format!("p_min={} above p_max={}", self.p_min, self.p_max));
        }
        Ok(())
    }

    pub fn checked(self, bus: usize) -> Result<Self, ModelError> {
        self.validate().map(|()| self).map_err(|reason| ModelError::InvalidMachine { bus, reason })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MachineState {
    pub delta: f64,
    pub omega: f64,
    pub eq_p: f64,
    pub pg: f64,
    pub ef: f64,
}

/// Electrical quantities at the air gap, computed from the terminal voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AirGap {
    pub pe: f64,
    pub qe: f64,
    pub eq: f64,
}

/// Power pushed through x'd from an EMF `e∠delta` into a bus at `v∠theta`.
///
/// Reactive power is counted positive when it leaves the machine:
/// `Q = (E'V cos(δ-θ) - V²)/x'd`.
pub fn terminal_power(e: f64, delta: f64, x_dp: f64, v: f64, theta: f64) -> (f64, f64) {
    let (s, c) = (delta - theta).sin_cos();
    (e * v * s / x_dp, (e * v * c - v * v) / x_dp)
}

/// E_q = (x_d/x'd) E'q − ((x_d − x'd)/x'd) V cos(δ − θ).
pub fn internal_voltage(params: &MachineParams, state: &MachineState, v: f64, theta: f64) -> f64 {
    let r = params.x_d / params.x_dp;
    r * state.eq_p - (r - 1.0) * v * (state.delta - theta).cos()
}

pub fn electrical_power(params: &MachineParams, state: &MachineState, v: f64, theta: f64) -> (f64, f64) {
    terminal_power(state.eq_p, state.delta, params.x_dp, v, theta)
}

pub fn air_gap(params: &MachineParams, state: &MachineState, v: f64, theta: f64) -> AirGap {
    let (pe, qe) = electrical_power(params, state, v, theta);
    AirGap { pe, qe, eq: internal_voltage(params, state, v, theta) }
}

/// Time derivatives of (δ, ω, E'q, P^g, E_f); returned in a [`MachineState`].
pub fn machine_derivatives(
    params: &MachineParams,
    state: &MachineState,
    air: &AirGap,
    u_g: f64,
    h_exc: f64,
) -> MachineState {
    MachineState {
        delta: state.omega,
        omega: (state.pg - params.d * state.omega - air.pe) / params.m,
        eq_p: (state.ef - air.eq) / params.t_d0p,
        pg: -state.pg / params.t + u_g,
        ef: h_exc,
    }
}

/// Primary droop governor: u = −ω + ω* − k_ω(P^g − P^g*) + P^g/T.
pub fn droop_control(params: &MachineParams, state: &MachineState) -> f64 {
    let s = &params.setpoints;
    -state.omega + s.omega_ref - params.k_omega * (state.pg - s.pg_ref) + state.pg / params.t
}

/// Droop governor tracking a movable power reference (AGC channel).
pub fn droop_control_with_reference(params: &MachineParams, state: &MachineState, pg_ref: f64) -> f64 {
    let s = &params.setpoints;
    -state.omega + s.omega_ref - params.k_omega * (state.pg - pg_ref) + state.pg / params.t
}

/// Exciter: h = −E_f + E_f* − k_E(E_q − E_q*).
pub fn excitation_control(params: &MachineParams, state: &MachineState, eq: f64) -> f64 {
    let s = &params.setpoints;
    -state.ef + s.ef_ref - params.k_e * (eq - s.eq_ref)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Passivity {
    /// Governor channel: input −ω, output P^g.
    C1,
    /// Excitation channel: input −E_q, output E_f.
    C2,
}

/// One recorded sample of a machine's input/output ports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortSample {
    pub time: f64,
    /// Samples from different event segments never share a difference stencil.
    pub segment: usize,
    pub omega: f64,
    pub pg: f64,
    pub ef: f64,
    pub eq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassivityReport {
    pub which: Passivity,
    /// max over samples of (Ṡ − bound); nonpositive means the inequality held.
    pub max_violation: f64,
    pub at_time: f64,
    pub samples_checked: usize,
}

/// Storage value and right-hand bound of the storage inequality at a sample,
/// relative to equilibrium `eq`.
///
/// S_ω = ½(ΔP^g)², bound −Δω·ΔP^g − k_ω(ΔP^g)².
/// S_E = (ΔE_f)²/(2k_E), bound −ΔE_q·ΔE_f − (ΔE_f)²/k_E.
pub fn storage_terms(params: &MachineParams, which: Passivity, s: &PortSample, eq: &PortSample) -> (f64, f64) {
    match which {
        Passivity::C1 => {
            let dp = s.pg - eq.pg;
            let dw = s.omega - eq.omega;
            (0.5 * dp * dp, -dw * dp - params.k_omega * dp * dp)
        }
        Passivity::C2 => {
            let de = s.ef - eq.ef;
            let dq = s.eq - eq.eq;
            (0.5 * de * de / params.k_e, -dq * de - de * de / params.k_e)
        }
    }
}

/// Central-difference audit of the storage inequality along a trajectory.
/// The last sample serves as the equilibrium and must have |ω| ≤ `omega_tol`.
pub fn passivity_audit(
    samples: &[PortSample],
    params: &MachineParams,
    which: Passivity,
    omega_tol: f64,
) -> Result<PassivityReport, AuditError> {
    if samples.len() < 3 {
        return Err(AuditError::TooShort);
    }
    let eq = samples[samples.len() - 1];
    if eq.omega.abs() > omega_tol {
        return Err(AuditError::TrajectoryNotConverged { max_omega: eq.omega.abs(), tol: omega_tol });
    }
    let terms: Vec<(f64, f64)> = samples.iter().map(|s| storage_terms(params, which, s, &eq)).collect();
    let mut report = PassivityReport { which, max_violation: f64::NEG_INFINITY, at_time: f64::NAN, samples_checked: 0 };
    for k in 1..samples.len() - 1 {
        let (a, b, c) = (&samples[k - 1], &samples[k], &samples[k + 1]);
        if a.segment != b.segment || b.segment != c.segment || c.time <= a.time {
            continue;
        }
        let s_dot = (terms[k + 1].0 - terms[k - 1].0) / (c.time - a.time);
        let v = s_dot - terms[k].1;
        report.samples_checked += 1;
        if v > report.max_violation {
            report.max_violation = v;
            report.at_time = b.time;
        }
    }
    if report.samples_checked == 0 {
        return Err(AuditError::TooShort);
    }
    Ok(report)
}
