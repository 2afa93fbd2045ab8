//! Cluster-based collaborative estimation for wireless sensor networks.
//!
//! The crate walks one pipeline end to end: measure pairwise sensor
//! dependence, cluster sensors on a dissimilarity derived from it, fit a
//! copula per cluster and run a MAP estimate inside each, fuse the cluster
//! estimates by average consensus, and optionally pick informative sensors
//! first under an energy budget. [`harness`] wires the stages together for
//! Monte Carlo studies and `wsn-est` exposes them on the command line.

pub mod clustering;
pub mod consensus;
pub mod copula;
pub mod dependence;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod io;
pub mod numeric;
pub mod scenario;
pub mod selection;

pub use error::{Error, Result};
