//! Numerical laboratory for continuous data assimilation on the rotating
//! Rayleigh-Benard limit system.
//!
//! The crate integrates a 2-D incompressible horizontal flow coupled to a
//! 3-D temperature deviation field with a nonlocal mean-temperature term,
//! synchronizes a second copy of the system through finite-rank
//! observation operators (nudging), and measures how fast and how long the
//! synchronized run tracks the observed one. The constitutive layer
//! (equation of state, entropy, transport laws, relative energy) is
//! implemented with executable hypothesis checks.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod interpolants;
pub mod solver;
pub mod thermo;

pub use error::{CdaError, Result};
