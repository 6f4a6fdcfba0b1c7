//! Centralized economic-dispatch oracle and KKT certification.
//!
//! The problem has one balance equality and box constraints, so the dual is a
//! monotone scalar map: P_i(λ) = clip((−λ − b_i)/a_i, p_min, p_max), and the
//! optimum is found by bisection on λ. Here λ follows the multiplier sign of
//! the Lagrangian, so −λ is the common marginal cost.

use serde::{Deserialize, Serialize};

use crate::controller::CostFunction;
use crate::error::DispatchError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct A3Status {
    pub feasible: bool,
    pub strict: bool,
}

/// Feasibility of the balance under the capacity boxes.
pub fn check_a3(limits: &[Limits], demand: f64) -> A3Status {
    let lo: f64 = limits.iter().map(|l| l.p_min).sum();
    let hi: f64 = limits.iter().map(|l| l.p_max).sum();
    A3Status { feasible: lo <= demand && demand <= hi, strict: lo < demand && demand < hi }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchProblem {
    costs: Vec<CostFunction>,
    limits: Vec<Limits>,
    demand: f64,
}

impl DispatchProblem {
    pub fn new(costs: Vec<CostFunction>, limits: Vec<Limits>, demand: f64) -> Result<Self, DispatchError> {
        if costs.len() != limits.len() {
            return Err(DispatchError::Dimension { costs: costs.len(), limits: limits.len() });
        }
        for (index, (c, l)) in costs.iter().zip(&limits).enumerate() {
            if !(c.a > 0.0) {
                return Err(DispatchError::InvalidGenerator { index, reason: format!("a={} not positive", c.a) });
            }
            if l.p_min > l.p_max {
                return Err(DispatchError::InvalidGenerator { index, reason: "p_min above p_max".into() });
            }
        }
        if !check_a3(&limits, demand).feasible {
            return Err(DispatchError::Infeasible {
                demand,
                lower: limits.iter().map(|l| l.p_min).sum(),
                upper: limits.iter().map(|l| l.p_max).sum(),
            });
        }
        Ok(Self { costs, limits, demand })
    }

    /// Problem used only to score a given point, e.g. a simulated operating
    /// point whose total output may sit a rounding error outside the boxes.
    /// Skips the feasibility check; do not pass it to [`solve_sfc`].
    pub fn certification(costs: Vec<CostFunction>, limits: Vec<Limits>, demand: f64) -> Self {
        assert_eq!(costs.len(), limits.len());
        Self { costs, limits, demand }
    }

    pub fn costs(&self) -> &[CostFunction] {
        &self.costs
    }

    pub fn limits(&self) -> &[Limits] {
        &self.limits
    }

    pub fn demand(&self) -> f64 {
        self.demand
    }

    pub fn a3(&self) -> A3Status {
        check_a3(&self.limits, self.demand)
    }

    /// Clipped inverse marginal cost at multiplier `lambda`.
    pub fn response(&self, lambda: f64) -> Vec<f64> {
        self.costs.iter().zip(&self.limits).map(|(c, l)| ((-lambda - c.b) / c.a).clamp(l.p_min, l.p_max)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub pg: Vec<f64>,
    pub lambda: f64,
    pub gamma_minus: Vec<f64>,
    pub gamma_plus: Vec<f64>,
    /// `(generator index, which limit)` for every generator sitting on a bound.
    pub binding: Vec<(usize, Binding)>,
    pub kkt_residual: f64,
}

/// Bisection on λ until the balance error is below 1e-10, or until λ runs
/// out of floating-point resolution.
pub fn solve_sfc(problem: &DispatchProblem) -> DispatchSolution {
    let p = problem;
    let tol = 1e-10;
    let marginal_at =
        |f: fn(&Limits) -> f64| -> Vec<f64> { p.costs.iter().zip(&p.limits).map(|(c, l)| c.marginal(f(l))).collect() };
    let at_min = marginal_at(|l| l.p_min);
    let at_max = marginal_at(|l| l.p_max);
    // ΣP(λ) is nonincreasing: λ_lo gives every unit at p_max, λ_hi every unit at p_min.
    let mut lo = -at_max.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut hi = -at_min.iter().cloned().fold(f64::INFINITY, f64::min);
    let total = |lambda: f64| -> f64 { p.response(lambda).iter().sum() };
    let lambda = if total(lo) - p.demand <= tol {
        lo
    } else if p.demand - total(hi) <= tol {
        hi
    } else {
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let gap = total(mid) - p.demand;
            if gap.abs() < tol {
                break;
            }
            if gap > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()) {
                break;
            }
        }
        mid
    };
    let pg = p.response(lambda);
    let mut gamma_minus = vec![0.0; pg.len()];
    let mut gamma_plus = vec![0.0; pg.len()];
    let mut binding = Vec::new();
    for (i, ((c, l), &x)) in p.costs.iter().zip(&p.limits).zip(&pg).enumerate() {
        // Stationarity f' − γ⁻ + γ⁺ + λ = 0 fixes whichever multiplier is active.
        let slack = c.marginal(x) + lambda;
        if x <= l.p_min && slack > 0.0 {
            gamma_minus[i] = slack;
            binding.push((i, Binding::Lower));
        } else if x >= l.p_max && slack < 0.0 {
            gamma_plus[i] = -slack;
            binding.push((i, Binding::Upper));
        } else if x <= l.p_min {
            binding.push((i, Binding::Lower));
        } else if x >= l.p_max {
            binding.push((i, Binding::Upper));
        }
    }
    let mu = vec![lambda; pg.len()];
    let kkt_residual = kkt_residual(p, &pg, &mu, &gamma_minus, &gamma_plus).max;
    DispatchSolution { pg, lambda, gamma_minus, gamma_plus, binding, kkt_residual }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub balance: f64,
    pub bound_violation: f64,
    pub dual_negativity: f64,
    pub complementarity: f64,
    pub max: f64,
}

/// Max-norm residuals of stationarity, primal balance, bounds, dual sign and
/// complementarity. `mu` carries one multiplier per generator.
pub fn kkt_residual(
    problem: &DispatchProblem,
    pg: &[f64],
    mu: &[f64],
    gamma_minus: &[f64],
    gamma_plus: &[f64],
) -> KktReport {
    let n = problem.costs.len();
    assert!(pg.len() == n && mu.len() == n && gamma_minus.len() == n && gamma_plus.len() == n);
    let mut r = KktReport {
        stationarity: 0.0,
        balance: (pg.iter().sum::<f64>() - problem.demand).abs(),
        bound_violation: 0.0,
        dual_negativity: 0.0,
        complementarity: 0.0,
        max: 0.0,
    };
    for i in 0..n {
        let (c, l) = (&problem.costs[i], &problem.limits[i]);
        let (gm, gp) = (gamma_minus[i], gamma_plus[i]);
        r.stationarity = r.stationarity.max((c.marginal(pg[i]) - gm + gp + mu[i]).abs());
        r.bound_violation = r.bound_violation.max(l.p_min - pg[i]).max(pg[i] - l.p_max);
        r.dual_negativity = r.dual_negativity.max(-gm).max(-gp);
        r.complementarity = r.complementarity.max((gm * (l.p_min - pg[i])).abs()).max((gp * (pg[i] - l.p_max)).abs());
    }
    r.max = r.stationarity.max(r.balance).max(r.bound_violation).max(r.dual_negativity).max(r.complementarity);
    r
}

/// The four controllable units of the 39-bus study, in MW and $/MW units,
/// ordered G32, G36, G38, G39.
pub fn reference_units() -> (Vec<CostFunction>, Vec<Limits>) {
    let rows = [(1000.0, 0.00009, 0.032), (1000.0, 0.00014, 0.030), (850.0, 0.00010, 0.032), (1080.0, 0.00008, 0.032)];
    rows.iter().map(|&(p_max, a, b)| (CostFunction { a, b }, Limits { p_min: 0.0, p_max })).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_problem(demand: f64) -> DispatchProblem {
        let (c, l) = reference_units();
        DispatchProblem::new(c, l, demand).unwrap()
    }

    #[test]
    fn a3_boundaries() {
        let (_, l) = reference_units();
        assert_eq!(check_a3(&l, 3414.0), A3Status { feasible: true, strict: true });
        assert_eq!(check_a3(&l, 3930.0), A3Status { feasible: true, strict: false });
        assert_eq!(check_a3(&l, 4000.0), A3Status { feasible: false, strict: false });
        assert!(matches!(DispatchProblem::new(reference_units().0, l, 4000.0), Err(DispatchError::Infeasible { .. })));
    }

    #[test]
    fn full_demand_saturates_every_unit() {
        let s = solve_sfc(&reference_problem(3930.0));
        assert_eq!(s.pg, vec![1000.0, 1000.0, 850.0, 1080.0]);
        assert_eq!(s.binding.len(), 4);
        assert!(s.kkt_residual < 1e-9);
    }

    #[test]
    fn zero_demand_idles_every_unit() {
        let s = solve_sfc(&reference_problem(0.0));
        assert!(s.pg.iter().all(|&p| p == 0.0));
        assert!(s.kkt_residual < 1e-9);
    }

    #[test]
    fn solver_output_passes_kkt() {
        let s = solve_sfc(&reference_problem(3414.0));
        assert!(s.kkt_residual < 1e-9, "{}", s.kkt_residual);
        assert!(s.binding.is_empty());
    }

    #[test]
    fn perturbed_generation_shows_in_balance() {
        let p = reference_problem(3414.0);
        let s = solve_sfc(&p);
        let mut pg = s.pg.clone();
        pg[0] += 0.01;
        let r = kkt_residual(&p, &pg, &[s.lambda; 4], &s.gamma_minus, &s.gamma_plus);
        assert!((r.balance - 0.01).abs() < 1e-9);
    }
}
