//! Aerial base-station placement toolkit.
//!
//! Given a set of ground terminals, a discretized flight grid of allowed
//! station positions, and a propagation model (free space, elevation-angle
//! statistical, tomographic over a spatial loss field, or an ingested gain
//! map), this crate answers: *how few aerial stations suffice so that every
//! terminal receives its demanded rate, and where do they go?*
//!
//! - [`geometry`] — regions, buildings, grids, flight-grid construction.
//! - [`propagation`] — channel gains, the tomographic line integral,
//!   capacities, gain-map files.
//! - [`solver_core`] — the group-sparse ADMM placement solver.
//! - [`lp`] — a small dense LP solver and the exact placement/extension
//!   programs built on it.
//! - [`baselines`] — lower bound, brute-force oracle, K-means baseline.
//! - [`harness`] — scenario files, Monte Carlo sweeps, CSV emission.

pub mod baselines;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod lp;
pub mod propagation;
pub mod solver_core;

pub use error::{Error, Result};
