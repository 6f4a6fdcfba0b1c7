//! Network-preserving power system model with a distributed optimal frequency
//! controller, a centralized dispatch oracle and the audits used to check the
//! closed loop against both.

// Guards are written as `!(x > 0.0)` so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod dispatch;
pub mod engine;
pub mod error;
pub mod machines;
pub mod network;
pub mod output;
pub mod plot;
pub mod scenario;

pub use error::{AuditError, DispatchError, Graph, ModelError, ScenarioError, SimError, SolveError};
