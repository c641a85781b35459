//! Finite-time consensus of delayed nonlinear multi-agent systems.

// NaN-rejecting `!(x > 0.0)` checks are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod agents;
pub mod control;
pub mod criteria;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
