//! Solvers for the relaxed saddle problem.

pub mod lipschitz;
pub mod nesterov;
pub mod project;
pub mod prox;
pub mod ral_solve;
pub mod tseng;
pub mod warm;

use serde::{Deserialize, Serialize};

pub use ral_solve::{nesterov_solve, prox_subproblem, solve, tseng_solve, SolveOutcome, SolverConfig, SolverKind};

/// One outer iteration of a first-order solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub fixed_point_residual: f64,
    pub kkt_max: f64,
    pub inner_iters: usize,
    /// Elapsed milliseconds; zero unless timing was requested.
    pub wall_ms: u64,
}
