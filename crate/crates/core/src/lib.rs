//! Finite-scale entropy and metric mean dimension estimates for continuous
//! bundle random dynamical systems over symbolic driving bases.

pub mod bowen;
pub mod config;
pub mod error;
pub mod harness;
pub mod measure;
pub mod output;
pub mod rng;
pub mod setcover;
pub mod system;
pub mod term;
pub mod topological;

pub use error::{Error, Result};
