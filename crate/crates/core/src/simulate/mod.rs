//! Euler-Maruyama Monte Carlo: ensembles, path functionals, Girsanov
//! reweighting, the derivative flow, densities and law comparisons.
//!
//! Every routine that consumes paths takes a [`PathSource`], so large runs
//! can stream paths from an [`EnsembleSpec`] instead of storing them.

mod density;
mod ensemble;
mod fdd;
mod flow;
mod functionals;
mod girsanov;
mod persist;

pub use density::{density_estimate, silverman_bandwidth, time_integrated_norm, DensityReport, TimeIntegralReport};
pub use ensemble::{default_drift_cap, simulate_paths, EnsembleSpec, PathEnsemble, PathSource, PathView, TimeGrid};
pub use fdd::{calibrate_threshold, fdd_compare, FddReport, NullCalibration, TestFunctional};
pub use flow::{derivative_flow, flow_along};
pub use functionals::{exit_time_functional, lpq_norm, modulus_statistics, occupation_functional, Cylinder, ModulusReport, SpaceTimeFn};
pub use girsanov::{girsanov_weights, psi_path, weight_convergence_check, GirsanovWeights, WeightConvergence};
pub use persist::{load_ensemble, read_functional_rows, save_ensemble, write_functional_rows, FunctionalRow};
