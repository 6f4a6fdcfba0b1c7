#![allow(dead_code)]

use gridsync_core::scenario::{Scenario, ScenarioFile};

pub const SMALL: &str = include_str!("small.json");

pub fn small_file() -> ScenarioFile {
    ScenarioFile::from_json_str(SMALL, "small.json").expect("small scenario parses")
}

pub fn small() -> Scenario {
    Scenario::build(small_file()).expect("small scenario builds")
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}
