use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gridsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridsync")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn small_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/common/small.json")
}

fn small_text() -> String {
    std::fs::read_to_string(small_scenario()).unwrap()
}

#[test]
fn dispatch_reference_units() {
    let o = gridsync(&["dispatch", "--reference-units", "--demand", "3414"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let pg: Vec<f64> = v["solution"]["pg"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    for (p, want) in pg.iter().zip([927.0, 610.0, 834.0, 1043.0]) {
        assert!((p - want).abs() <= 2.0, "{pg:?}");
    }
    assert!((v["marginal_cost"].as_f64().unwrap() - 0.1154).abs() < 1e-4);

    assert_eq!(code(&gridsync(&["dispatch", "--table1", "--demand", "3414"])), 0);
    for demand in ["0", "3930"] {
        assert_eq!(code(&gridsync(&["dispatch", "--reference-units", "--demand", demand])), 0, "demand {demand}");
    }
    let o = gridsync(&["dispatch", "--reference-units", "--demand", "4000"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("A3"));
}

#[test]
fn dispatch_from_a_cost_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("costs.json");
    std::fs::write(&path, r#"[{"a": 1.0, "b": 0.0, "p_max_mw": 10}, {"a": 1.0, "b": 0.0, "p_max_mw": 10}]"#).unwrap();
    let o = gridsync(&["dispatch", "--costs", path.to_str().unwrap(), "--demand", "8"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for p in v["solution"]["pg"].as_array().unwrap() {
        assert!((p.as_f64().unwrap() - 4.0).abs() < 1e-9, "{p}");
    }

    std::fs::write(&path, r#"[{"a": -1.0, "b": 0.0, "p_max_mw": 10}]"#).unwrap();
    assert_eq!(code(&gridsync(&["dispatch", "--costs", path.to_str().unwrap(), "--demand", "1"])), 1);
    assert_eq!(code(&gridsync(&["dispatch", "--demand", "1"])), 1);
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = gridsync(&["run", "--scenario", small_scenario().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["summary.json", "trajectory.csv", "frequency.svg", "pg.svg"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["certified"], true);
}

#[test]
fn agc_run_is_not_certified() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridsync(&[
        "run",
        "--scenario",
        small_scenario().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--variant",
        "agc",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn batch_runs_report_the_worst_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, small_text().replace("\"dp_mw\": 20", "\"dp_mw\": 400")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gridsync"))
        .env("GRIDSYNC_THREADS", "2")
        .args(["run", "--scenario", small_scenario().to_str().unwrap(), "--scenario", bad.to_str().unwrap()])
        .args(["--out", dir.path().join("out").to_str().unwrap(), "--t-end", "5"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn invalid_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&gridsync(&["run", "--scenario", missing.to_str().unwrap(), "--out", out.to_str().unwrap()])), 1);

    let empty = dir.path().join("empty.json");
    let mut v: serde_json::Value = serde_json::from_str(&small_text()).unwrap();
    v["network"]["buses"] = serde_json::json!([]);
    std::fs::write(&empty, v.to_string()).unwrap();
    assert_eq!(code(&gridsync(&["run", "--scenario", empty.to_str().unwrap(), "--out", out.to_str().unwrap()])), 1);

    let split = dir.path().join("split.json");
    let mut v: serde_json::Value = serde_json::from_str(&small_text()).unwrap();
    v["network"]["comm_edges"] = serde_json::json!([]);
    std::fs::write(&split, v.to_string()).unwrap();
    let o = gridsync(&["run", "--scenario", split.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("A1"));
}

#[test]
fn hessian_check_on_initial_and_stressed_states() {
    assert_eq!(code(&gridsync(&["check-hessian", "--scenario", "ne39"])), 0);
    let s = small_scenario();
    let o = gridsync(&["check-hessian", "--scenario", s.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("positive definite"));

    // Push one rotor 100 degrees ahead of the rest.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&gridsync(&["run", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap()])), 0);
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines: Vec<String> = csv.lines().map(str::to_string).collect();
    let col = lines[0].split(',').position(|h| h == "gen1.delta").unwrap();
    let last = lines.last_mut().unwrap();
    let mut cells: Vec<String> = last.split(',').map(str::to_string).collect();
    let delta: f64 = cells[col].parse().unwrap();
    cells[col] = format!("{:e}", delta + 100f64.to_radians());
    *last = cells.join(",");
    let stressed = dir.path().join("stressed.csv");
    std::fs::write(&stressed, lines.join("\n") + "\n").unwrap();
    let o = gridsync(&["check-hessian", "--scenario", s.to_str().unwrap(), "--state", stressed.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}
