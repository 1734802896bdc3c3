//! Closed-loop co-simulation of a primal-dual virtual power plant (VPP)
//! dispatch running over a linearized radial feeder, with the dual-variable
//! downlink carried by a deterministic packet-delay simulator.
//!
//! The crate is organised bottom-up:
//!
//! - [`feeder`]: radial feeder data and the LinDistFlow sensitivity model.
//! - [`dispatch`]: feeder-level dual updates and per-DER projected gradient steps.
//! - [`netsim`]: downlink star network event simulator and delay traces.
//! - [`profiles`]: load / PV availability time series and resampling.
//! - [`cosim`]: the closed loop with hold-last-value dual delivery, plus metrics
//!   and report writers.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cosim;
pub mod dispatch;
mod error;
pub mod feeder;
pub mod netsim;
pub mod profiles;

pub use error::{Error, Result};
