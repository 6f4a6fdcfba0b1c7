//! Hessian of the potential in edge-angle and voltage coordinates.
//!
//! Machine reactances are treated as extra lines from each online
//! generator's internal node (voltage E'q, angle δ) to its terminal bus, which
//! gives an augmented graph. With independent edge angles η_e and node
//! voltages V̂ = (E'q, V) the second derivatives are
//!
//! ```text
//! ∂²/∂η_e²      = B_e V_a V_b cos η_e
//! ∂²/∂η_e ∂V_a  = B_e V_b sin η_e
//! ∂²/∂V_a ∂V_b  = −B_e cos η_e            (a, b joined by e)
//! ∂²/∂V_i²      = B_ii − q_i/V_i²
//! ∂²/∂E'²       = x_d/(x'd(x_d − x'd))
//! ```

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::lyapunov::self_susceptances;
use super::{System, SystemState};

/// Meaning of one row/column of [`a4_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianVariable {
    /// Angle across an in-service line (line index).
    LineAngle(usize),
    /// δ − θ across a machine reactance (generator index).
    MachineAngle(usize),
    /// E'q of a generator.
    Emf(usize),
    /// V of a bus.
    Voltage(usize),
}

struct AugmentedEdge {
    b: f64,
    /// Node voltage columns and magnitudes of the two endpoints.
    a: (usize, f64),
    z: (usize, f64),
    eta: f64,
}

pub fn a4_matrix(sys: &System, state: &SystemState) -> (DMatrix<f64>, Vec<HessianVariable>) {
    let (theta, v) = (&state.alg.theta, &state.alg.v);
    let online: Vec<usize> = (0..sys.generators.len()).filter(|&g| sys.generators[g].online).collect();
    let mut vars = Vec::new();
    let mut edges = Vec::new();
    for (k, l) in sys.net.lines().iter().enumerate().filter(|(_, l)| l.in_service) {
        vars.push(HessianVariable::LineAngle(k));
        edges.push((l.b, l.from, l.to, theta[l.from] - theta[l.to], None));
    }
    for &g in &online {
        let gen = &sys.generators[g];
        let m = &state.machines[g];
        vars.push(HessianVariable::MachineAngle(g));
        edges.push((1.0 / gen.params.x_dp, usize::MAX, gen.bus, m.delta - theta[gen.bus], Some(g)));
    }
    let n_edges = edges.len();
    let emf_col = |slot: usize| n_edges + slot;
    let volt_col = |bus: usize| n_edges + online.len() + bus;
    for &g in &online {
        vars.push(HessianVariable::Emf(g));
    }
    for i in 0..sys.net.n_buses() {
        vars.push(HessianVariable::Voltage(i));
    }
    let edges: Vec<AugmentedEdge> = edges
        .into_iter()
        .map(|(b, from, to, eta, gen)| {
            let a = match gen {
                Some(g) => {
                    let slot = online.iter().position(|&x| x == g).unwrap();
                    (emf_col(slot), state.machines[g].eq_p)
                }
                None => (volt_col(from), v[from]),
            };
            AugmentedEdge { b, a, z: (volt_col(to), v[to]), eta }
        })
        .collect();

    let dim = vars.len();
    let mut h = DMatrix::zeros(dim, dim);
    for (e, edge) in edges.iter().enumerate() {
        let (s, c) = edge.eta.sin_cos();
        let ((ca, va), (cz, vz)) = (edge.a, edge.z);
        h[(e, e)] = edge.b * va * vz * c;
        h[(e, ca)] = edge.b * vz * s;
        h[(ca, e)] = h[(e, ca)];
        h[(e, cz)] = edge.b * va * s;
        h[(cz, e)] = h[(e, cz)];
        h[(ca, cz)] -= edge.b * c;
        h[(cz, ca)] -= edge.b * c;
    }
    for (slot, &g) in online.iter().enumerate() {
        let p = &sys.generators[g].params;
        h[(emf_col(slot), emf_col(slot))] = p.x_d / (p.x_dp * (p.x_d - p.x_dp));
    }
    let bii = self_susceptances(sys);
    for (i, bus) in sys.net.buses().iter().enumerate() {
        h[(volt_col(i), volt_col(i))] = bii[i] - bus.q / (v[i] * v[i]);
    }
    (h, vars)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HessianReport {
    pub min_eigenvalue: f64,
    pub positive_definite: bool,
    pub dimension: usize,
}

/// Smallest eigenvalue of [`a4_matrix`] by a symmetric eigensolve.
pub fn hessian_check_a4(sys: &System, state: &SystemState) -> HessianReport {
    let (h, _) = a4_matrix(sys, state);
    let dimension = h.nrows();
    let min_eigenvalue = SymmetricEigen::new(h).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    HessianReport { min_eigenvalue, positive_definite: min_eigenvalue > 0.0, dimension }
}

/// Cholesky-based definiteness test; cheaper than the eigensolve.
pub(crate) fn hessian_is_positive_definite(sys: &System, state: &SystemState) -> bool {
    a4_matrix(sys, state).0.cholesky().is_some()
}

/// Variables carrying the most weight in the eigenvector of the smallest
/// eigenvalue, largest first.
pub fn weakest_mode(sys: &System, state: &SystemState, top: usize) -> Vec<(HessianVariable, f64)> {
    let (h, vars) = a4_matrix(sys, state);
    let eig = SymmetricEigen::new(h);
    let k = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(k);
    let mut w: Vec<(HessianVariable, f64)> = vars.into_iter().zip(v.iter().copied()).collect();
    w.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    w.truncate(top);
    w
}
