//! Numerical verification of local supremum bounds and weak Harnack
//! inequalities for kinetic (Kolmogorov-type) equations with rough
//! coefficients.
//!
//! The building blocks, bottom-up:
//!
//! * [`geometry`]: drift flows, drift-aligned cylinders, transported cutoffs.
//! * [`kolmogorov`]: the explicit fundamental solution of `d_t + v d_x - d_vv`
//!   and the smooth solvers built on it (forward, dual, viscous).
//! * [`rough`]: rough coefficient fields, weak residuals, sign certificates and
//!   the composition transform.
//! * [`degiorgi`]: smoothed truncations and the supremum-bound iteration.
//! * [`harnack`]: the log transform and the weak Harnack chain.
//! * [`campaign`]: configuration and experiment orchestration.

pub mod campaign;
pub mod config;
pub mod degiorgi;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod harnack;
pub mod kolmogorov;
pub mod report;
pub mod rough;
pub mod scheme;

pub use error::{Error, Result};
pub use grid::{Axis, GridField, GridSpec};
