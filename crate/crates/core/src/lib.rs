//! Adaptively reweighted convex surrogates for nonconvex, nonsmooth sparse
//! optimization.
//!
//! The library minimizes `f(x) + Σᵢ rᵢ(cᵢ(xᵢ))` over a convex set, where `f`
//! is a smooth convex loss, each `cᵢ` is a group magnitude, and each `rᵢ` is a
//! concave penalty from a small catalog. The outer loop repeatedly solves a
//! weighted convex subproblem whose weights are penalty derivatives at the
//! smoothed magnitudes of the previous iterate, then shrinks the smoothing.
//!
//! Modules:
//! - [`penalties`]: the penalty catalog and the reweighting rule
//! - [`model`]: problem data, objectives, surrogates, and weights
//! - [`solvers`]: convex subproblem solvers and stationarity residuals
//! - [`air`]: the outer loop, its diagnostics, and the level-set guard
//! - [`harness`]: seeded sparse-recovery experiments and sweep aggregation
//! - [`config`] and [`cli`]: the `air-opt` command line

pub mod air;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod penalties;
pub mod selftest;
pub mod solvers;

pub use error::{AirError, Result};
pub use penalties::{ExtendedReal, Mode, PenaltyKind};
