//! Benchmarking black-box optimizers on ill-conditioned test functions.
//!
//! The crate provides the test functions, five optimizers behind a common
//! [`Optimizer`] trait, a budget-enforcing evaluator and a harness that runs
//! trials, aggregates success performance (SP1) and persists result tables.

// `!(a > b)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bfgs;
pub mod cmaes;
pub mod de;
pub mod eval;
pub mod functions;
pub mod harness;
pub mod optimizer;
pub mod pso;
pub mod rng;
pub mod trustregion;

pub use eval::{BudgetExhausted, BudgetedEvaluator, Objective, RunRecord, Termination};
pub use functions::{FunctionError, FunctionKind, FunctionSpec, OrthogonalMatrix};
pub use harness::{sp1, sweep, Problem, Sp1Result, SweepConfig, SweepTable};
pub use optimizer::{lookup, registry, IterationCost, Optimizer};
pub use rng::{derive_stream, RngStream};
