//! Stochastic-variational quantum hydrodynamics on two-dimensional charts.
//!
//! The crate covers the hydrodynamic representation of a wave function on a
//! polar grid, forward and backward stochastic particle ensembles, the radial
//! eigenvalue problem with its loop quantization, coordinate-dependent
//! uncertainty bounds, and a Crank–Nicolson propagator used to audit the
//! hydrodynamic equations in time.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod error;
pub mod geometry;
pub mod madelung;
pub mod sde;
pub mod states;
pub mod eigensolver;
pub mod tridiag;
pub mod uncertainty;
pub mod evolution;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
