//! Stochastic variance-reduced gradient (SVRG) iterative regularization for
//! linear ill-posed systems `A_i x = y_i`, `i = 1..N`.
//!
//! The crate provides:
//!
//! - [`linop`]: the block-structured forward operator `A = (A_1, ..., A_N)`
//!   with adjoints and power-iteration norm estimates;
//! - [`problems`]: midpoint-rule discretizations of the classical Fredholm
//!   test problems `phillips`, `gravity` and `shaw`, plus synthetic
//!   source-condition instances for rate experiments;
//! - [`noise`]: seeded relative/absolute Gaussian data perturbation with the
//!   realized noise level `delta = ||y^delta - y||`;
//! - [`stepsize`]: the two-step-size plan `(gamma0, gamma1)`, its
//!   admissibility conditions and the stability/termination constants;
//! - [`solvers`]: Landweber, SGD, classic one-step-size SVRG, split-step
//!   SVRG, its dual reformulation (an exactness oracle) and SVRG gated by the
//!   discrepancy principle;
//! - [`stopping`]: a-priori stopping index rules `n_delta ~ c * delta^{-p}`;
//! - [`harness`]: seeded Monte-Carlo ensembles with per-epoch statistics,
//!   boxplot summaries and the convergence-rate slope check;
//! - [`fileio`]: CSV/JSON persistence for operators, problems, traces and
//!   ensemble aggregates;
//! - [`cli`]: the `svrg-reg` command-line front end.
//!
//! Every stochastic component is driven by an explicit 64-bit seed and a
//! pinned generator, so runs replay bit-identically.

// validation uses `!(v > 0.0)` so NaN fails the check; `v <= 0.0` would not
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fileio;
pub mod harness;
pub mod linop;
pub mod noise;
pub mod problems;
pub mod solvers;
pub mod stepsize;
pub mod stopping;

pub use error::{Error, Result};

/// Crate version string embedded in CSV metadata headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
