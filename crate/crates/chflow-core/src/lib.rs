//! Cognitive-hierarchy day-to-day traffic dynamics.
//!
//! Travelers differ in how many steps ahead they reason about everyone
//! else's next-day route choices. This crate implements two such dynamics on
//! explicit route sets — a projection-based tatonnement (NTP) targeting the
//! deterministic user equilibrium and a Logit dynamic targeting the
//! stochastic one — together with their analytic Jacobians, equilibrium
//! solvers, local-stability classification, parameter-region sweeps, and
//! calibration against observed day-to-day route counts.

pub mod calibrate;
pub mod equilibrium;
pub mod error;
pub mod feasible_set;
pub mod framework;
pub mod logit;
pub mod network;
pub mod ntp;
pub mod stability;

pub use error::{Error, Result};
pub use framework::{ClassFlowState, ClassProfile, Dynamic, Prediction, Trajectory};
pub use network::{BprParams, Link, Network, OdSpec};
