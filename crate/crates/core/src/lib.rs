//! Simulation and optimal control of a two-population language competition
//! model driven by environmental noise.
//!
//! The state is a pair of population densities `(f1, f2)` on a rectangle,
//! evolving under diffusion, advection, logistic growth, a status-mediated
//! conversion term, and multiplicative noise. Four space-time controls
//! (two growth rates `beta1`, `beta2` and two status levels `s1`, `s2`)
//! are chosen inside box constraints to track target densities at minimal
//! control effort. The optimizer runs damped forward-backward sweeps:
//! solve the state system forward along a sampled noise path, solve the
//! adjoint system backward, project the resulting candidate controls onto
//! the admissible box, and repeat until the controls stop moving.
//!
//! Module map:
//! - [`grid`]: rectangular space-time grid, scalar fields, discrete operators
//! - [`noise`]: Brownian driving paths and spatial noise mode shapes
//! - [`model`]: model parameters, reaction terms and their derivatives
//! - [`forward`]: two forward solvers (direct Euler-Maruyama and an
//!   exponentially transformed pathwise backend)
//! - [`adjoint`]: backward adjoint solver and control-gradient sources
//! - [`optimizer`]: cost functional, projection, fixed-point sweeps,
//!   adjoint-vs-finite-difference gradient verification
//! - [`ensemble`]: Monte Carlo runs over many noise paths, stability probes
//! - [`config`] / [`run`]: config file loading and the command entry points
//!   used by the CLI

pub mod adjoint;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod forward;
pub mod grid;
pub mod model;
pub mod noise;
pub mod optimizer;
pub mod run;

pub use error::Error;
