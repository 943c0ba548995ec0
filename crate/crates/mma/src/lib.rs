//! Two-layer rolling-horizon control for ride-hailing fleets.
//!
//! The strategic layer plans zone-to-zone match and relocation flows over a
//! rolling window by solving a MILP through Lagrangian relaxation; the
//! execution layer turns the current-interval guidance into concrete
//! vehicle-order assignments and relocations with polynomial algorithms.
//! An event-driven simulator, baseline policies, and a Lasso demand/supply
//! forecaster round out the experiment harness.

pub mod baselines;
pub mod core;
pub mod exec;
pub mod forecast;
pub mod linsolve;
pub mod lr;
pub mod policy;
pub mod sim;
pub mod slm;
