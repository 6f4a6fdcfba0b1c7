//! Distributed secondary frequency controller for controllable generators.
//!
//! Each controllable unit runs a primal-dual update on its own power output,
//! estimates the shared balance multiplier by second-order consensus with its
//! communication neighbors, and handles capacity limits through projected
//! multipliers. An evaluator only ever sees its own state plus a
//! [`NeighborView`].

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Quadratic generation cost f(P) = ½aP² + bP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostFunction {
    pub a: f64,
    pub b: f64,
}

impl CostFunction {
    pub fn new(a: f64, b: f64) -> Result<Self, ModelError> {
        if !(a > 0.0) {
            return Err(ModelError::InvalidController(format!("cost curvature must be positive, got {a}")));
        }
        Ok(Self { a, b })
    }

    pub fn value(&self, p: f64) -> f64 {
        0.5 * self.a * p * p + self.b * p
    }

    pub fn marginal(&self, p: f64) -> f64 {
        self.a * p + self.b
    }

    /// Lipschitz constant of the marginal cost (= strong convexity modulus).
    pub fn lipschitz(&self) -> f64 {
        self.a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub k_pg: f64,
    pub k_mu: f64,
    pub k_z: f64,
    pub k_gamma: f64,
    /// Estimator damping, only used by the measurement-based variant.
    pub tau: f64,
}

impl ControllerGains {
    pub fn validate(&self, cost: &CostFunction) -> Result<(), ModelError> {
        for (name, v) in [("k_pg", self.k_pg), ("k_mu", self.k_mu), ("k_z", self.k_z), ("k_gamma", self.k_gamma)] {
            if !(v > 0.0) {
                return Err(ModelError::InvalidController(format!("{name} must be positive, got {v}")));
            }
        }
        let l = cost.lipschitz();
        if !(self.tau > 0.0 && self.tau * l < 4.0) {
            return Err(ModelError::TauOutOfRange { tau: self.tau, l });
        }
        Ok(())
    }
}

/// Local dual/estimator state of one controllable generator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub mu: f64,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    /// Virtual load demand; read only by the oracle-fed estimator.
    pub p_hat: f64,
    /// Governor reference moved by the AGC baseline.
    pub agc_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Estimator fed with the virtual load demands p̂.
    Oracle,
    /// Estimator driven by local frequency measurements.
    Measured,
    /// Centralized AGC baseline instead of the distributed controller.
    Agc,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Variant::Oracle),
            "measured" => Ok(Variant::Measured),
            "agc" => Ok(Variant::Agc),
            other => Err(format!("unknown variant {other:?} (oracle|measured|agc)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Oracle => "oracle",
            Variant::Measured => "measured",
            Variant::Agc => "agc",
        })
    }
}

/// What a controller may read from its communication neighborhood.
#[derive(Debug, Clone, Copy)]
pub struct NeighborView<'a> {
    pub neighbor_mus: &'a [f64],
    /// Edge variables already signed for this endpoint (z for the owner,
    /// −z for the other end).
    pub incident_z: &'a [f64],
}

impl NeighborView<'_> {
    fn disagreement(&self, mu: f64) -> f64 {
        self.neighbor_mus.iter().map(|m| mu - m).sum()
    }

    fn z_sum(&self) -> f64 {
        self.incident_z.iter().sum()
    }
}

/// [x]⁺_a: x if a > 0 or x > 0, else 0.
pub fn positive_projection(x: f64, a: f64) -> f64 {
    if a > 0.0 || x > 0.0 {
        x
    } else {
        0.0
    }
}

/// u_g = P^g/T − k_pg(ω + f'(P^g) + μ − γ⁻ + γ⁺).
pub fn control_input(
    gains: &ControllerGains,
    cost: &CostFunction,
    state: &ControllerState,
    omega: f64,
    pg: f64,
    t: f64,
) -> f64 {
    pg / t - gains.k_pg * (omega + cost.marginal(pg) + state.mu - state.gamma_minus + state.gamma_plus)
}

/// μ̇ = k_μ(P^g − p̂ − Σ(μ_i − μ_j) − Σz_ij).
pub fn mu_dynamics_oracle(gains: &ControllerGains, state: &ControllerState, pg: f64, view: NeighborView<'_>) -> f64 {
    gains.k_mu * (pg - state.p_hat - view.disagreement(state.mu) - view.z_sum())
}

/// μ̇ = k_μ(−Σ(μ_i − μ_j) − Σz_ij + Mω̇ + Dω + τ(−μ − f'(P^g) + γ⁻ − γ⁺)).
#[allow(clippy::too_many_arguments)]
pub fn mu_dynamics_measured(
    gains: &ControllerGains,
    cost: &CostFunction,
    state: &ControllerState,
    m: f64,
    d: f64,
    omega: f64,
    omega_dot: f64,
    pg: f64,
    view: NeighborView<'_>,
) -> f64 {
    let estimate = m * omega_dot + d * omega;
    let damping = gains.tau * (-state.mu - cost.marginal(pg) + state.gamma_minus - state.gamma_plus);
    gains.k_mu * (-view.disagreement(state.mu) - view.z_sum() + estimate + damping)
}

/// ż = k_z(μ_i − μ_j) for the edge owned by `i`.
pub fn z_dynamics(k_z: f64, mu_i: f64, mu_j: f64) -> f64 {
    k_z * (mu_i - mu_j)
}

/// Projected limit-multiplier dynamics (γ̇⁻, γ̇⁺).
pub fn gamma_dynamics(
    gains: &ControllerGains,
    pg: f64,
    p_min: f64,
    p_max: f64,
    gamma_minus: f64,
    gamma_plus: f64,
) -> (f64, f64) {
    (
        gains.k_gamma * positive_projection(p_min - pg, gamma_minus),
        gains.k_gamma * positive_projection(pg - p_max, gamma_plus),
    )
}

/// Largest disturbance gain tolerated by the measurement-based estimator,
/// √(τD(4 − τl)).
pub fn beta_bound(tau: f64, d: f64, l: f64) -> Result<f64, ModelError> {
    if !(tau > 0.0 && tau * l < 4.0) {
        return Err(ModelError::TauOutOfRange { tau, l });
    }
    Ok((tau * d * (4.0 - tau * l)).sqrt())
}

/// Symmetric part of the per-generator (ω, P^g, μ) block of the estimator's
/// linearization with curvature `c` and disturbance gain `beta`.
pub fn estimator_block(tau: f64, d: f64, c: f64, beta: f64) -> Matrix3<f64> {
    Matrix3::new(-d, 0.0, -0.5 * beta, 0.0, -c, -0.5 * tau * c, -0.5 * beta, -0.5 * tau * c, -tau)
}

/// Single-area AGC: ACE = K_f ω allocated by participation factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgcConfig {
    pub k_f: f64,
    pub shares: Vec<f64>,
}

impl AgcConfig {
    pub fn new(k_f: f64, shares: Vec<f64>) -> Result<Self, ModelError> {
        let total: f64 = shares.iter().sum();
        if (total - 1.0).abs() > 1e-9 || shares.iter().any(|&r| r < 0.0) {
            return Err(ModelError::AgcShares(total));
        }
        Ok(Self { k_f, shares })
    }
}

/// Per-generator command −r_i·K_f·ω.
pub fn agc_baseline(cfg: &AgcConfig, omega_measured: f64) -> Vec<f64> {
    cfg.shares.iter().map(|r| -r * cfg.k_f * omega_measured).collect()
}
