//! Forward deep-learning solvers for high-dimensional decoupled
//! forward-backward stochastic differential equations.
//!
//! Three training formulations are provided: the deep BSDE scheme with one
//! network per time step and a terminal-mismatch loss, the local scheme with
//! one network and per-interval residuals, and the locally additive scheme
//! whose per-time-point losses are accumulated up to the terminal condition.

pub mod ad;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod problems;
pub mod schemes;
pub mod sde;
pub mod train;

pub use error::{Error, Result};
