//! Relaxed robust active-learning problem.

pub mod model;
pub mod operators;

pub use model::{
    assemble, assemble_supervised, build_ck, completion, grad_alpha, initial_point, objective, primal_value, ral_lite,
    row_residual, select_queries, slack_values, k_hadamard_g, LinearBundle, Mode, Primal, QuerySelection, RalConfig, RalProblem, SaddlePoint,
};
pub use operators::{ConstraintOperators, Row, RowClass, RowKey};
