//! Numerical toolkit for Itô equations `dx = sigma dw + b dt` with
//! VMO-type diffusion and drifts in Morrey spaces.
//!
//! The crate builds coefficient fields, estimates the function-space
//! quantities that control them, mollifies and truncates them, simulates
//! the equation by Monte Carlo, computes truncated Wiener chaos expansions
//! in low dimension, and checks numerical claims from a suite file.

pub mod chaos;
pub mod error;
pub mod fields;
pub mod io;
pub mod mollify;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod spaces;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
