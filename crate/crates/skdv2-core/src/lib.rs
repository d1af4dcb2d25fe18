//! Pseudo-spectral simulator and verification harness for a stochastic
//! second-order KdV equation with multiplicative cylindrical-Wiener noise.
//!
//! The crate is organized around the objects of the underlying model:
//!
//! - [`field`]: periodic grid functions with spectral calculus.
//! - [`weights`]: certified weight functions and the smooth norm cutoff.
//! - [`noise`]: the truncated Wiener process and the Hilbert-Schmidt
//!   operator family, with certified amplitude bounds.
//! - [`dynamics`]: the drift variants (full, regularized, cutoff Galerkin).
//! - [`integrator`]: semi-implicit Euler-Maruyama stepping and path runs.
//! - [`diagnostics`]: energy functional, Itô budget, exact
//!   integration-by-parts identities, martingale/QV probes, moment
//!   estimators.
//! - [`ensemble`]: reproducible parallel Monte Carlo and epsilon sweeps.
//! - [`verify`]: the property suites behind the `verify` command.

pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod integrator;
pub mod noise;
pub mod rng;
pub mod verify;
pub mod weights;

pub use config::SimConfig;
pub use error::{Error, Result};
pub use field::{Field, Grid, Spectrum};
