//! Discrete p-modulus of curve families on uniform grids, with the geometric
//! toolkit around it: region descriptions, shortest-path oracles, ring
//! bounds, piecewise-linear quasiconformal maps and the accessibility
//! experiments built on top.

pub mod bounds;
pub mod domain;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod grid;
pub mod path;
pub mod qc;
pub mod report;
pub mod solver;

pub use error::{Error, Result};
