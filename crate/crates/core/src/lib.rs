//! Exact analysis and Monte Carlo simulation of Bernoulli-Laplace urn chains
//! that arise from pile-based card shuffles.

pub mod error;
pub mod exact;
pub mod bounds;
pub mod cli;
pub mod coupling;
pub mod hahn;
pub mod multi_urn;
pub mod stats;
pub mod two_urn;

pub use error::{Error, Result};
