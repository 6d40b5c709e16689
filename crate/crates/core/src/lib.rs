//! Boundary control of stop-and-go traffic waves.
//!
//! The traffic on a road section of length L is modeled by the Aw-Rascle-Zhang
//! (ARZ) system, a 2x2 hyperbolic PDE in density rho(x,t) and velocity v(x,t)
//! with a relaxation source. Around a congested equilibrium the linearized
//! dynamics split into two transported Riemann fields (w, v) moving at speeds
//! lambda1 (downstream) and -lambda2 (upstream), and a variable-speed-limit
//! actuation at the outlet can suppress the oscillation.
//!
//! The crate provides:
//!
//! - [`traffic_model`]: fundamental diagram, equilibria, linearization
//!   coefficients, and the physical <-> Riemann coordinate change;
//! - [`kernel_solver`]: the backstepping gain kernels Kw, Kv on the triangular
//!   domain 0 <= xi <= x <= L, solved by characteristic marching and verified
//!   by residual substitution;
//! - [`arz_sim`]: a finite-volume time marcher for the nonlinear system (and
//!   an upwind marcher for the linearized one) under a pluggable boundary
//!   controller;
//! - [`control`]: the boundary controllers (exact backstepping, two
//!   DeepONet-based variants, PI, zero) plus Lyapunov diagnostics;
//! - [`neural_op`]: a from-scratch DeepONet stack (MLPs, backprop, Adam,
//!   dataset generation, training, binary model serialization) realizing the
//!   operators lambda2 -> kernels and lambda2 -> U(t).

// Index-based loops are the clearest way to write the matrix/stencil math
// here, and negated float comparisons are deliberate NaN-rejecting guards.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arz_sim;
pub mod control;
pub mod kernel_solver;
pub mod neural_op;
pub mod traffic_model;

mod quadrature;

pub use quadrature::trapezoid;

use thiserror::Error;

/// Failure classes shared by the whole crate.
///
/// The variants deliberately mirror the process exit-code classes of the CLI:
/// configuration problems, numerical failures, and model-file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or incompatible component wiring.
    #[error("configuration error: {0}")]
    Config(String),
    /// A value outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Mismatched array lengths or layer dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A numerical procedure failed (CFL violation, state blow-up, divergence).
    #[error("numerical failure: {0}")]
    Numerics(String),
    /// Model serialization / deserialization failure.
    #[error("model I/O error: {0}")]
    ModelIo(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
