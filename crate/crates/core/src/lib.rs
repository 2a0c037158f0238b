//! Decentralized computation of entropy-regularized Wasserstein barycenters.
//!
//! Agents on a connected communication graph each hold a private probability
//! measure they can only sample from. They cooperatively approximate the
//! barycenter on a fixed discrete support by running an accelerated
//! primal-dual stochastic gradient method on the dual problem, exchanging
//! gradient estimates with graph neighbors only.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // NaN-rejecting checks

pub mod agents;
pub mod apdsgd;
pub mod config;
pub mod dual;
pub mod error;
pub mod exec;
pub mod graph;
pub mod imageio;
pub mod measures;
pub mod reference;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
