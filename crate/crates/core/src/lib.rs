//! Simulation and homogenization of Schrödinger-type equations driven by a
//! heterogeneous nonlocal operator with a rapidly oscillating kernel.

pub mod brownian;
pub mod cell;
pub mod cli;
pub mod config;
pub mod effective;
pub mod error;
pub mod harness;
pub mod integrator;
pub mod kernel;
pub mod presets;
pub mod quad;
pub mod singular;
pub mod validation;

pub use error::{Error, Result};
