//! Backward semigroup on a grid (d <= 2), truncated Wiener chaos
//! expansions of `f(x_r)`, residual energies, regression cross-checks, the
//! gradient inequality and the range projection of `sigma^* sigma`.

mod expansion;
mod gradient;
mod pde;
mod projection;

pub use expansion::{chaos_coefficients, q_operator, summability_profile, ChaosConfig, ChaosExpansion, OrderTerms, QOperator, SummabilityProfile};
pub use gradient::{gradient_bound_check, GradientBoundReport};
pub use pde::{auto_radius, semigroup_solve, PdeConfig, PdeGrid, Semigroup, SemigroupSolution, SpaceFn};
pub use projection::{project_mc, range_projection, ProjectionReport, RangeProjection};

use crate::error::Result;

/// `E |xi - Pi^n xi|^2` from an expansion of order at least `n`.
pub fn residual_energy(exp: &ChaosExpansion, n: usize) -> Result<f64> {
    exp.residual_energy(n)
}
