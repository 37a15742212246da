//! Energy-minimal stirring of a passive scalar on the unit square by a
//! finite set of cellular flows.
//!
//! The crate solves the first-order optimality system of a kinetic-energy
//! minimization subject to a final-time mix-norm target by a relaxed
//! fixed-point iteration over controls and a KKT multiplier.

pub mod basis;
pub mod config;
pub mod elliptic;
pub mod error;
pub mod expr;
pub mod grid;
pub mod mixnorm;
pub mod optimizer;
pub mod runner;
pub mod snapshot;
pub mod transport;

pub use error::{Error, Result};
