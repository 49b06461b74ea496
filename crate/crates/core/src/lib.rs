//! Randomized block-coordinate primal-dual methods for composite convex
//! problems whose linear coupling constraint Ax = b may be inconsistent.
//!
//! The solver minimizes Ψ(x) = Σᵢ φᵢ(xᵢ) + rᵢ(xᵢ) over the set X of
//! minimizers of h(x) = ½‖Ax − b‖². When Ax = b is feasible this is the
//! usual linearly constrained problem.

pub mod block_model;
pub mod dlmp;
pub mod error;
pub mod linalg;
pub mod prox_ops;
pub mod sampling;
pub mod solver;
pub mod stepsize;

pub use error::{Error, Result};
