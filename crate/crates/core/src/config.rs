//! Tolerance constants shared by the solvers, checks and suites.

use serde::{Deserialize, Serialize};

/// Relative tolerance for checks against smooth closed forms.
pub const SMOOTH_REL_TOL: f64 = 1e-8;

/// Relative tolerance for checks on solver output.
pub const SOLVER_REL_TOL: f64 = 1e-4;

/// Number of grid intervals spanning the support of a solved steady state.
pub const DEFAULT_SUPPORT_NODES: usize = 4096;

/// Tolerance record threaded through the evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Closed-form comparisons on smooth integrands.
    pub smooth: f64,
    /// Comparisons on solver outputs.
    pub solver: f64,
    /// Mass match requested from the steady-state root search.
    pub mass_match: f64,
    /// Allowed drop of a discrete mass function, relative to total mass.
    pub monotone: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { smooth: SMOOTH_REL_TOL, solver: SOLVER_REL_TOL, mass_match: 1e-10, monotone: 1e-9 }
    }
}
