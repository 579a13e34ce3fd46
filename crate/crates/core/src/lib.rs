//! Structurally informed ensemble transform Kalman filtering on periodic 2D
//! grids, with a WENO5/TVDRK3 forecast model.

pub mod assimilation;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod solver;
pub mod statistics;
pub mod weighting;

pub use error::{Error, Result};
