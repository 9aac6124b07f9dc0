//! Spectral Galerkin / backward Euler solver for the stochastic Cahn-Hilliard
//! equation
//!
//! ```text
//! dX + A(AX + F(X)) dt = dW,   F(v) = v³ − v,
//! ```
//!
//! on `(0, 1)` with Neumann boundary conditions and additive Q-Wiener noise,
//! plus a Monte Carlo harness that measures weak and strong convergence rates
//! by self-convergence against a finely resolved reference.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod integrator;
pub mod invariants;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod nonlinearity;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use integrator::{backward_euler_step, simulate_linear_exact, simulate_path, solve_implicit, SolveStats, SolverConfig};
pub use model::ModelConfig;
pub use noise::{NoiseFamily, NoiseTable, QSpectrum};
pub use nonlinearity::NemytskiiEval;
pub use spectral::{Basis, PhysicalField, SpectralField};
