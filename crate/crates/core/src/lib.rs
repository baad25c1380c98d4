//! Monte Carlo laboratory for invariant bond percolation on finite balls of
//! transitive graphs.

pub mod cluster;
pub mod connectivity;
mod error;
pub mod graph;
pub mod invariance;
pub mod percolation;
pub mod rng;
pub mod stats;
pub mod walks;
pub mod wreath;

pub use error::{Error, Result};
