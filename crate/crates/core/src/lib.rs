//! Estimation of linear cyclic network models from data collected in
//! multiple environments under unknown shift interventions.

pub mod error;
pub mod feasibility;
pub mod jointdiag;
mod par;
pub mod pipeline;
pub mod scatter;
pub mod simulator;
pub mod stability;

pub use error::{Error, Result};
