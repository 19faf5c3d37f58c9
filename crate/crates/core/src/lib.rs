//! Planning of multi-return UAV data-collection tours.
//!
//! A UAV leaves a depot, hovers over ground sensors to download their data and
//! may return to the depot several times. Each sensor's age of information is
//! the time from the start of its collection until the next depot return; the
//! planner trades the average age against propulsion and hover energy.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: radio and propulsion physics, per-edge time/energy weights.
//! - [`tours`]: multi-tour representation, metric evaluation and an exhaustive
//!   enumeration oracle for small instances.
//! - [`lp`] / [`milp`]: a dense bounded-variable simplex with duals and
//!   unbounded rays, and a best-bound branch-and-bound on top of it.
//! - [`formulation`]: the single-commodity flow model, normalisation extremes,
//!   baselines and the weighted-sum sweep.
//! - [`benders`]: decomposition of the flow model into a binary master and a
//!   dual flow subproblem.
//! - [`trajopt`]: refinement of the hover-based tour into trajectories that
//!   collect data while flying through each sensor's coverage disc.
//! - [`experiments`]: instance generation and the batch routines behind the CLI.

pub mod benders;
pub mod error;
pub mod experiments;
pub mod formulation;
pub mod lp;
pub mod milp;
pub mod model;
pub mod tours;
pub mod trajopt;

pub use error::{Error, Result};
