//! Ground states of coupled nonlinear Schrödinger systems under L²-ball mass
//! constraints.
//!
//! The crate minimizes `J(u) = ½∫|∇u|² − ∫G(u)` over radial K-tuples on the
//! Pohozaev–Nehari manifold `{M = 0}` intersected with `{|u_i|₂ ≤ ρ_i}`, extracts
//! the Lagrange multipliers and checks the identities a ground state must satisfy.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod nonlinearity;
pub mod radial_core;
pub mod rearrange;
mod roots;
pub mod solver;
pub mod variational;

pub use error::{Error, Result};
