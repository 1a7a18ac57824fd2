//! Ground states of the two-dimensional porous-medium Keller-Segel model with
//! logarithmic interaction.
//!
//! The crate computes the radially decreasing compactly supported steady state
//! of a given mass, evaluates its free energy and Euler-Lagrange conditions,
//! checks the rearrangement and logarithmic Hardy-Littlewood-Sobolev
//! inequalities, and evolves the radial mass function toward the steady state
//! between scaled sub- and supersolution barriers.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod mass_pde;
pub mod plane;
pub mod potential;
pub mod quadrature;
pub mod radial;
pub mod rearrange;
pub mod steady;
pub mod suites;

pub use error::{Error, Result};
