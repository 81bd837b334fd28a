//! Perturbed distributional Bellman optimality over quantile-represented
//! return distributions.
//!
//! The crate is organised bottom-up:
//!
//! - [`quantile`]: algebra of N-quantile distributions (means, ξ-weighted
//!   expectations, the Huber quantile loss, left-truncated variance, W₂).
//! - [`perturbation`]: Dirichlet sampling, construction of the reweighting
//!   vector ξ, perturbation gaps and Δ schedules.
//! - [`mdp`]: finite MDPs with Gaussian-mixture rewards and the stochastic
//!   N-Chain.
//! - [`dp`]: exact distributional dynamic programming with the perturbed
//!   optimality operator and numerical checks of its convergence bound.
//! - [`agents`]: tabular QR, DLTV, p-DLTV and PQR learners.
//! - [`harness`]: config-driven experiments, metrics and plot data.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod dp;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod perturbation;
pub mod quantile;
pub mod seed;
mod stats;
pub mod table;

pub use error::{Error, Result};
pub use quantile::{HuberParams, QuantileDist};
pub use table::QuantileTable;
