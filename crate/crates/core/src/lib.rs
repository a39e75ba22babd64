//! Delay-optimal D2D data sharing and radio resource allocation for
//! distributed batch gradient descent at the wireless network edge.
//!
//! The crate is split along the lifetime of one experiment:
//!
//! - [`scenario`]: system constants, device profiles, channel gains, non-IID
//!   label partitions and the JSON config format.
//! - [`delay_model`]: closed-form rates and per-phase delays of one training
//!   run, with and without a data-sharing phase.
//! - [`convex_core`]: bisection, Shannon-rate inversion and the log-barrier
//!   interior-point solver for the per-`tau1` convex subproblem.
//! - [`optimizer`]: the three allocation schemes (joint sharing + allocation,
//!   adaptive bandwidth only, fixed equal split) and optimality checks.
//! - [`training_sim`]: a small federated BGD simulator that executes a plan on
//!   synthetic data and records loss, accuracy and modeled wall-clock time.
//! - [`cli`]: the `edgeshare` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod convex_core;
pub mod delay_model;
pub mod optimizer;
pub mod scenario;
pub mod training_sim;

pub use convex_core::{solve_inner, InnerSolution, SolverOptions, SolverReport};
pub use delay_model::{total_delay, DelayBreakdown, SharingPlan};
pub use optimizer::{solve_fixed, solve_p1, solve_p2, OptimizationResult, Scheme, SearchOptions};

pub use scenario::{build_paper_scenario, DeviceProfile, Scenario, SystemParams};
