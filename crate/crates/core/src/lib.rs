//! Cold-damping feedback cooling of optomechanical resonators: analytic
//! loop model, time-domain simulator, spectral inference, sideband
//! thermometry and controller design.

// NaN must fail every range check, so negated comparisons are deliberate
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod error;
pub mod filter;
pub mod heterodyne;
pub mod inference;
pub mod lsq;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod units;

pub use error::{Error, Result};
