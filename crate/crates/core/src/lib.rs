//! Mean-field delayed BSDEs with jumps on a finite scenario tree.
//!
//! The crate builds a discrete stochastic basis (Brownian coin plus thinned
//! Poisson marks), represents adapted processes and their weighted norms,
//! iterates the Picard map to a fixed point on finite horizons, extends to
//! infinite horizons by a truncation ladder, and evaluates the weighted-norm
//! contraction conditions that guarantee existence and uniqueness.

pub mod basis;
pub mod contraction;
mod error;
pub mod generator;
pub mod infinite;
pub mod picard;
pub mod process;
pub mod suites;
pub mod terminal;

pub mod cli;
pub mod config;

pub use basis::{build_collapsed_tree, build_tree, build_tree_with_budget, JumpSpec, NodeRef, ScenarioTree, TimeGrid};
pub use contraction::{c_beta, finite_condition, infinite_condition, measure_condition, search_beta, special_condition, AnalysisMode, FeasibilityReport};
pub use error::{Error, Result};
pub use generator::{builtin, probe_lipschitz, Builtin, DelayDescriptor, DelayMeasure, DriverInput, GeneratorSpec, Witness};
pub use infinite::{apriori_check, decay_check, solve_infinite, solve_truncated, LadderConfig, LadderTrace};
pub use picard::{apply_upsilon, martingale_projection, solve_finite, stability_check, verify_solution, FiniteProblem, IterationTrace, PicardConfig, SolveMode};
pub use process::{AdaptedProcess, SegmentKind, SegmentView, SolutionTriple};
pub use terminal::Terminal;
