use thiserror::Error;

/// Rejections raised while building a model from raw parameters.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("bus index {0} out of range")]
    UnknownBus(usize),
    #[error("line {from}-{to}: susceptance must be positive, got {b}")]
    NonPositiveSusceptance { from: usize, to: usize, b: f64 },
    #[error("bus {bus}: load damping must be positive, got {damping}")]
    NonPositiveDamping { bus: usize, damping: f64 },
    #[error("communication edge {0}-{1} touches a bus without a controllable generator")]
    CommEdgeOffController(usize, usize),
    #[error("{0} is not connected")]
    Disconnected(Graph),
    #[error("machine at bus {bus}: {reason}")]
    InvalidMachine { bus: usize, reason: String },
    #[error("controller: {0}")]
    InvalidController(String),
    #[error("AGC participation factors must sum to 1, got {0}")]
    AgcShares(f64),
    #[error("estimator damping tau={tau} must lie in (0, 4/l) with l={l}")]
    TauOutOfRange { tau: f64, l: f64 },
}

/// Which graph a connectivity verdict refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Graph {
    Power,
    Communication,
}

impl std::fmt::Display for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Graph::Power => f.write_str("power network"),
            Graph::Communication => f.write_str("communication graph (A1)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("voltage Newton did not converge in {iterations} iterations (residual {residual:.3e}); reduce dt")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("voltage Newton iterate went nonpositive at bus {bus} after step halving")]
    NegativeVoltageIterate { bus: usize },
    #[error("power flow did not converge (residual {residual:.3e})")]
    PowerFlow { residual: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error("A3 violated: demand {demand} outside [{lower}, {upper}]")]
    Infeasible { demand: f64, lower: f64, upper: f64 },
    #[error("dispatch problem has {costs} costs but {limits} limit pairs")]
    Dimension { costs: usize, limits: usize },
    #[error("generator {index}: {reason}")]
    InvalidGenerator { index: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("simulation diverged at t={time:.4} s: {reason}")]
    Diverged { time: f64, reason: String },
    #[error("at t={time:.4} s: {source}")]
    Solve { time: f64, source: SolveError },
    #[error("event at t={time:.4} s disconnects the {graph}")]
    DisconnectedAfterEvent { time: f64, graph: Graph },
    #[error("event at t={time:.4} s not applicable: {reason}")]
    EventNotApplicable { time: f64, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("validation failed ({assumption}): {message}")]
    Validation { assumption: String, message: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("trajectory tail not converged: max |omega| {max_omega:.3e} exceeds {tol:.1e}")]
    TrajectoryNotConverged { max_omega: f64, tol: f64 },
    #[error("trajectory has fewer than three usable samples")]
    TooShort,
}
