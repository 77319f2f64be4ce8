//! Particle simulation, dissipativity checks and vanishing-discount tools
//! for ergodic mean-field control problems.
//!
//! The crate is organized bottom up:
//!
//! - [`model`]: affine mean-field models with analytic constants.
//! - [`particle`]: Euler–Maruyama for the interacting particle system,
//!   Wasserstein distances and coupling experiments.
//! - [`policy`]: feedback policy families and their optimizer.
//! - [`value`]: discounted and finite-horizon values by Monte Carlo.
//! - [`ergodic`]: the ergodic pair `(λ, φ)` and the diagnostics built on it.

pub mod benchmarks;
pub mod error;
pub mod functional;
pub mod linalg;
pub mod model;
pub mod particle;
pub mod policy;
pub mod stats;
pub mod value;
pub mod ergodic;
mod serde_util;

pub use error::{Error, Result};
pub use model::{ActionSet, AffineModel, CustomModel, Dynamics, LipschitzConstants, ModelSpec};
pub use particle::{Ensemble, InitialLaw, MeasureSummary, RngStream};
pub use policy::{Policy, OptimizerConfig};
pub use stats::Estimate;
