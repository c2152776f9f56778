//! Hamiltonian Monte Carlo samplers with an optional Hessian-corrected
//! momentum refresh.
//!
//! Standard HMC draws momenta from `N(0, I)`. The Hessian-corrected variant
//! (HHMC) instead draws them from `N(q(θ), Q(θ))`, where the law is chosen so
//! that the exact Hamiltonian flow of the local quadratic expansion of the
//! log-density, run for the trajectory time `δ = εL`, lands on that quadratic
//! approximation of the target. Trajectories are still simulated with the
//! leapfrog scheme, so the Hessian is only needed at trajectory endpoints.
//!
//! Module map:
//!
//! * [`model`]: target densities with exact gradients and Hessians.
//! * [`spectral`]: eigendecomposition-based matrix functions, the momentum
//!   law, and the exact flow of the quadratic model.
//! * [`integrator`]: leapfrog integration and the Hamiltonian.
//! * [`samplers`]: HMC/HHMC transition kernels and the chain runner.
//! * [`diagnostics`]: autocorrelation, effective sample size, summaries.
//! * [`cli`]: run configuration, file formats and the command implementations.

pub mod cli;
pub mod diagnostics;
mod error;
pub mod integrator;
pub mod model;
pub mod samplers;
pub mod spectral;

pub use error::{Error, Result};

/// Column vector type used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix type used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
