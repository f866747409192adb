//! Joint service migration and resource allocation for multi-cell mobile
//! edge computing.
//!
//! The crate plans, slot by slot, which edge site should serve each mobile
//! user when both the radio link and the per-site computing capacity are
//! shared resources and moving a service between sites costs something.
//! It provides:
//!
//! - a scenario generator (hexagonal site layout, random-waypoint user
//!   mobility, path-loss channels) that produces planning instances,
//! - a fractional relaxation solver for the placement problem, based on a
//!   parameterized reformulation of the sum-of-ratios objective with an
//!   inner dual decomposition,
//! - an integer recovery stage that rounds site loads and solves an exact
//!   assignment problem per load profile,
//! - a variant where each site splits its own spectrum into resource blocks
//!   and the split is optimized jointly with the placement,
//! - a single-hotspot solver that dimensions how many services a congested
//!   site should push to its neighbors,
//! - brute-force oracles and reference baselines for validation.

pub mod bandwidth;
pub mod error;
pub mod hotspot;
pub mod hungarian;
pub mod integer_recovery;
pub mod model;
pub mod oracles;
pub mod relaxed_solver;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
pub use model::{
    objective_p1, offloading_rate, offloading_rate_at_load, Assignment, ComputeParams,
    CostParams, Instance, ObjectiveBreakdown, RateParams,
};
pub use report::SolveReport;
