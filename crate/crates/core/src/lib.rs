//! Numerical laboratory for sequential interval dynamics.
//!
//! The crate builds non-stationary compositions of expanding interval
//! maps, discretizes their transfer operators by Ulam's method, carries
//! out the reverse-martingale/coboundary decomposition of the centered
//! Birkhoff sums, turns orbits into variance-time polygonal processes,
//! and measures empirical Wasserstein distances between those processes
//! and Brownian motion on path space.

pub mod brownian;
pub mod experiments;
pub mod decomp;
pub mod error;
pub mod grid;
pub mod maps;
pub mod process;
pub mod rng;
pub mod transfer;
pub mod wasserstein;

pub use error::{Error, Result};
pub use grid::GridFunction;
