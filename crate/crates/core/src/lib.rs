//! Renewal measures, slowly varying integrals and the tail of the perturbed
//! random walk supremum `R = sup_n A_1 ... A_{n-1} B_n`, with Monte Carlo
//! checks of the associated limit theorems.

pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod prw;
pub mod quad;
pub mod renewal;
pub mod rng;
pub mod stats;
pub mod sv;
pub mod verify;

pub use error::{Error, Result};
