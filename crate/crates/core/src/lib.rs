//! Hybrid finite-time parameter estimation for linear regression models.
//!
//! Two gradient estimators with different adaptation rates flow side by side
//! over a window of length `δ`; at the end of the window a reset combines
//! them with gains built from their state-transition matrices so that the
//! estimation error cancels exactly. Only excitation over that one window is
//! required. The crate also covers excitation analysis, noise-robustness
//! bounds, baseline estimators and a scaling benchmark.

// NaN-rejecting comparisons are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod estimator;
pub mod excitation;
pub mod numerics;
pub mod robustness;
pub mod signals;

pub use error::{Error, Result};
