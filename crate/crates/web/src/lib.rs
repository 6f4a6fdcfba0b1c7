//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export wraps a plain function returning `Result<String, String>` so
//! the logic can be tested natively; the strings are JSON documents.

use gridsync_core::controller::{beta_bound, estimator_block, Variant};
use gridsync_core::dispatch::{check_a3, reference_units, solve_sfc, Binding, DispatchProblem};
use gridsync_core::plot::render_channel;
use gridsync_core::scenario::{run_scenario, EventEntry, PlotChannel, Scenario, ScenarioFile};
use nalgebra::SymmetricEigen;
use serde_json::json;
use wasm_bindgen::prelude::*;

const DEMO: &str = include_str!("demo.json");
const UNIT_NAMES: [&str; 4] = ["G32", "G36", "G38", "G39"];

/// Economic dispatch of the four reference units at `demand_mw`.
pub fn dispatch_report(demand_mw: f64) -> Result<String, String> {
    let (costs, limits) = reference_units();
    if !check_a3(&limits, demand_mw).feasible {
        let hi: f64 = limits.iter().map(|l| l.p_max).sum();
        return Err(format!("demand {demand_mw} MW is outside the capacity range [0, {hi}] MW"));
    }
    let sol = solve_sfc(&DispatchProblem::new(costs, limits.clone(), demand_mw).map_err(|e| e.to_string())?);
    let units: Vec<_> = (0..UNIT_NAMES.len())
        .map(|k| {
            let bound = sol.binding.iter().find(|(i, _)| *i == k).map(|(_, b)| match b {
                Binding::Lower => "lower",
                Binding::Upper => "upper",
            });
            json!({ "name": UNIT_NAMES[k], "pg_mw": sol.pg[k], "p_max_mw": limits[k].p_max, "binding": bound })
        })
        .collect();
    Ok(json!({ "marginal_cost": -sol.lambda, "kkt_residual": sol.kkt_residual, "units": units }).to_string())
}

/// Load step of `dp_mw` on the demo ring, simulated with `variant`.
/// Returns the plot for `channel` and the certification verdict.
pub fn load_step_report(dp_mw: f64, variant: &str, channel: &str) -> Result<String, String> {
    let variant: Variant = variant.parse()?;
    let channel = PlotChannel::ALL
        .into_iter()
        .find(|c| c.name() == channel)
        .ok_or_else(|| format!("unknown channel {channel:?}"))?;
    let mut file = ScenarioFile::from_json_str(DEMO, "demo.json").map_err(|e| e.to_string())?;
    file.controller.variant = variant;
    for e in &mut file.events {
        if let EventEntry::LoadStep { dp_mw: dp, .. } = e {
            *dp = dp_mw;
        }
    }
    let scenario = Scenario::build(file).map_err(|e| e.to_string())?;
    let outcome = run_scenario(&scenario).map_err(|e| e.to_string())?;
    let kkt_tol = scenario.file.sim.kkt_tol;
    Ok(json!({
        "svg": render_channel(&scenario, &outcome.trajectory, channel),
        "converged": outcome.steady.converged,
        "certified": outcome.certified(kkt_tol),
        "kkt_residual": outcome.kkt.max,
        "max_rel_dispatch_error": outcome.dispatch.as_ref().map(|d| d.max_rel_error),
    })
    .to_string())
}

/// Disturbance-gain bound for the measured estimator and the eigenvalues
/// of its 3x3 block at `beta`.
pub fn estimator_report(tau: f64, d: f64, l: f64, beta: f64) -> Result<String, String> {
    let bound = beta_bound(tau, d, l).map_err(|e| e.to_string())?;
    let mut eig: Vec<f64> = SymmetricEigen::new(estimator_block(tau, d, l, beta)).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    Ok(json!({
        "bound": bound,
        "eigenvalues": eig,
        "negative_definite": eig.iter().all(|&x| x < 0.0),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn dispatch(demand_mw: f64) -> Result<String, JsError> {
    dispatch_report(demand_mw).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn load_step(dp_mw: f64, variant: &str, channel: &str) -> Result<String, JsError> {
    load_step_report(dp_mw, variant, channel).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn estimator(tau: f64, d: f64, l: f64, beta: f64) -> Result<String, JsError> {
    estimator_report(tau, d, l, beta).map_err(|e| JsError::new(&e))
}
