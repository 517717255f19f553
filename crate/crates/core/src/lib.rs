//! Robust pool-based active learning with a Simple-Complex classifier.
//!
//! The crate covers the data substrate ([`data`], [`kernel`], [`loss`]), the
//! supervised Simple-Complex model ([`simple_complex`], [`complexity`]), the
//! relaxed active-learning saddle problem ([`ral`]), its first-order solvers
//! ([`solver`]), brute-force reference solvers ([`oracle`]) and the
//! simulation harness ([`harness`]).

pub mod complexity;
pub mod data;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod loss;
pub mod oracle;
pub mod qp;
pub mod ral;
pub mod simple_complex;
pub mod solver;

pub use error::{Error, Result};
