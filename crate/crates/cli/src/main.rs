use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gridsync_core::controller::{CostFunction, Variant};
use gridsync_core::dispatch::{check_a3, reference_units, solve_sfc, DispatchProblem, Limits};
use gridsync_core::engine::{hessian_check_a4, resolve_algebraic, weakest_mode, HessianVariable};
use gridsync_core::output::{read_trajectory_csv, state_from_row, summarize, write_summary, write_trajectory_csv};
use gridsync_core::plot::render_channel;
use gridsync_core::scenario::{bundled, run_scenario, Scenario, ScenarioFile};
use gridsync_core::ScenarioError;

const EXIT_INPUT: u8 = 1;
const EXIT_UNCERTIFIED: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_NOT_PD: u8 = 4;

#[derive(Parser)]
#[command(
    name = "gridsync",
    version,
    about = "Distributed optimal frequency control on a network-preserving grid model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one or more scenarios and write trajectory, summary and plots.
    Run {
        /// Scenario file, or the name of a bundled scenario (ne39, ne39_gen_trip, ne39_line_trip).
        /// Repeat for a batch.
        #[arg(long, required = true)]
        scenario: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Solve the centralized economic dispatch and print it as JSON.
    Dispatch {
        /// The four controllable units of the bundled 39-bus grid.
        #[arg(long, alias = "table1", conflicts_with = "costs")]
        reference_units: bool,
        /// JSON list of {"a", "b", "p_min_mw", "p_max_mw"} in MW units.
        #[arg(long)]
        costs: Option<PathBuf>,
        #[arg(long)]
        demand: f64,
    },
    /// Check positive definiteness of the potential-energy Hessian.
    CheckHessian {
        #[arg(long)]
        scenario: String,
        /// Trajectory CSV holding the state to test (defaults to the scenario's initial state).
        #[arg(long)]
        state: Option<PathBuf>,
        /// Row of the CSV to use; the last row if omitted.
        #[arg(long)]
        row: Option<usize>,
    },
}

fn load_file(source: &str) -> Result<ScenarioFile, ScenarioError> {
    let path = Path::new(source);
    match bundled(source) {
        Some(text) if !path.exists() => ScenarioFile::from_json_str(text, source),
        _ => ScenarioFile::load(path),
    }
}

/// Exit code for a scenario that failed to load or validate.
fn scenario_exit(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Validation { assumption, .. } if assumption == "A3" => EXIT_UNCERTIFIED,
        _ => EXIT_INPUT,
    }
}

fn run_one(source: &str, out: &Path, dt: Option<f64>, t_end: Option<f64>, variant: Option<Variant>) -> u8 {
    let mut file = match load_file(source) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{source}: {e}");
            return scenario_exit(&e);
        }
    };
    if let Some(dt) = dt {
        file.sim.dt = dt;
    }
    if let Some(t) = t_end {
        file.sim.t_end = t;
    }
    if let Some(v) = variant {
        file.controller.variant = v;
    }
    let scenario = match Scenario::build(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{source}: {e}");
            return scenario_exit(&e);
        }
    };
    let outcome = match run_scenario(&scenario) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{source}: {e}");
            return EXIT_DIVERGED;
        }
    };
    let summary = summarize(&scenario, &outcome);
    let written =
        std::fs::create_dir_all(out).and_then(|()| write_summary(&out.join("summary.json"), &summary)).and_then(|()| {
            if scenario.file.outputs.csv {
                write_trajectory_csv(&out.join("trajectory.csv"), &scenario, &outcome.trajectory)?;
            }
            for &ch in &scenario.file.outputs.plots {
                let svg = render_channel(&scenario, &outcome.trajectory, ch);
                std::fs::write(out.join(format!("{}.svg", ch.name())), svg)?;
            }
            Ok(())
        });
    if let Err(e) = written {
        eprintln!("{source}: writing {}: {e}", out.display());
        return EXIT_INPUT;
    }
    println!(
        "{}: t={:.2} s converged={} certified={} kkt={:.3e} max|omega|={:.3e} -> {}",
        scenario.file.name,
        summary.final_time,
        summary.converged,
        summary.certified,
        summary.kkt.max,
        summary.steady_state.max_omega,
        out.display()
    );
    if summary.certified {
        0
    } else {
        eprintln!(
            "{source}: steady state not certified (converged={}, frequency restored={}, kkt={:.3e})",
            summary.converged, summary.frequency_restored, summary.kkt.max
        );
        EXIT_UNCERTIFIED
    }
}

fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("GRIDSYNC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

fn run_batch(sources: &[String], out: &Path, dt: Option<f64>, t_end: Option<f64>, variant: Option<Variant>) -> u8 {
    if sources.len() == 1 {
        return run_one(&sources[0], out, dt, t_end, variant);
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut codes = vec![0u8; sources.len()];
    let slots: Vec<std::sync::Mutex<&mut u8>> = codes.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|s| {
        for _ in 0..worker_count(sources.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(source) = sources.get(k) else { break };
                let dir = out.join(format!("{k:02}-{}", run_dir_name(source)));
                **slots[k].lock().unwrap() = run_one(source, &dir, dt, t_end, variant);
            });
        }
    });
    drop(slots);
    codes.into_iter().max().unwrap_or(0)
}

fn run_dir_name(source: &str) -> String {
    Path::new(source).file_stem().map_or_else(|| source.to_string(), |s| s.to_string_lossy().into_owned())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CostRow {
    a: f64,
    b: f64,
    #[serde(default)]
    p_min_mw: f64,
    p_max_mw: f64,
}

fn dispatch(table: bool, costs: Option<PathBuf>, demand: f64) -> u8 {
    let (c, l) = if table {
        reference_units()
    } else if let Some(path) = costs {
        let rows: Vec<CostRow> = match std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
        {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return EXIT_INPUT;
            }
        };
        let mut costs = Vec::new();
        for r in &rows {
            match CostFunction::new(r.a, r.b) {
                Ok(c) => costs.push(c),
                Err(e) => {
                    eprintln!("{}: {e}", path.display());
                    return EXIT_INPUT;
                }
            }
        }
        (costs, rows.iter().map(|r| Limits { p_min: r.p_min_mw, p_max: r.p_max_mw }).collect())
    } else {
        eprintln!("dispatch needs --reference-units or --costs <path>");
        return EXIT_INPUT;
    };
    if !check_a3(&l, demand).feasible {
        let lo: f64 = l.iter().map(|x| x.p_min).sum();
        let hi: f64 = l.iter().map(|x| x.p_max).sum();
        eprintln!("A3 violated: demand {demand} MW outside capacity range [{lo}, {hi}] MW");
        return EXIT_UNCERTIFIED;
    }
    let problem = match DispatchProblem::new(c, l, demand) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_INPUT;
        }
    };
    let sol = solve_sfc(&problem);
    let report = serde_json::json!({
        "demand_mw": demand,
        "marginal_cost": -sol.lambda,
        "solution": sol,
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    0
}

fn check_hessian(source: &str, state: Option<PathBuf>, row: Option<usize>) -> u8 {
    let scenario = match load_file(source).and_then(Scenario::build) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{source}: {e}");
            return EXIT_INPUT;
        }
    };
    let mut st = scenario.initial.clone();
    if let Some(path) = state {
        let table = match read_trajectory_csv(&path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return EXIT_INPUT;
            }
        };
        let k = row.unwrap_or(table.rows.len().saturating_sub(1));
        let Some(values) = table.rows.get(k) else {
            eprintln!("{}: no row {k}", path.display());
            return EXIT_INPUT;
        };
        st = match state_from_row(&scenario, &table.header, values) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return EXIT_INPUT;
            }
        };
        if let Err(e) = resolve_algebraic(&scenario.system, &mut st) {
            eprintln!("{}: {e}", path.display());
            return EXIT_NOT_PD;
        }
    }
    let r = hessian_check_a4(&scenario.system, &st);
    let verdict = if r.positive_definite { "positive definite" } else { "NOT positive definite" };
    println!("dimension {} min eigenvalue {:.6e}: {verdict}", r.dimension, r.min_eigenvalue);
    if r.positive_definite {
        return 0;
    }
    let sys = &scenario.system;
    for (var, w) in weakest_mode(sys, &st, 5) {
        let name = match var {
            HessianVariable::LineAngle(k) => {
                let l = &sys.net.lines()[k];
                format!("angle of line {}-{}", scenario.label(l.from), scenario.label(l.to))
            }
            HessianVariable::MachineAngle(g) => format!("internal angle of G{}", scenario.label(sys.generators[g].bus)),
            HessianVariable::Emf(g) => format!("E'q of G{}", scenario.label(sys.generators[g].bus)),
            HessianVariable::Voltage(i) => format!("V at bus {}", scenario.label(i)),
        };
        println!("  weakest mode: {name} ({w:+.3})");
    }
    EXIT_NOT_PD
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { scenario, out, dt, t_end, variant } => run_batch(&scenario, &out, dt, t_end, variant),
        Command::Dispatch { reference_units, costs, demand } => dispatch(reference_units, costs, demand),
        Command::CheckHessian { scenario, state, row } => check_hessian(&scenario, state, row),
    };
    ExitCode::from(code)
}
