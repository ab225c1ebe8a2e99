//! Coefficient fields `(sigma, b)` of the equation
//! `dx = sigma(t, x) dw + b(t, x) dt`, the analytic example zoo and
//! grid-sampled fields.

mod grid;
mod zoo;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid::{load_grid_field, read_grid, save_grid_field, GridField, GridHeader, GridRole, Interpolation};
pub use zoo::{
    brownian, build_counterexample_drift, build_drift_inverse, build_drift_parabolic,
    build_fractal_drift, build_sigma_vmo, constant_field, fractal_radii, ornstein_uhlenbeck,
    smooth_bump, smooth_bump_drift, Direction,
};

/// Writes a `d x d1` row-major matrix at `(t, x)` into the output slice.
pub type MatrixFn = dyn Fn(f64, &[f64], &mut [f64]) -> Result<()> + Send + Sync;
/// Writes a `d`-vector at `(t, x)` into the output slice.
pub type VectorFn = dyn Fn(f64, &[f64], &mut [f64]) -> Result<()> + Send + Sync;
/// A scalar function of time, e.g. the sup of the bounded part of `D sigma`.
pub type TimeFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A point `(t, x)` of space-time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: Vec<f64>,
}

impl SpaceTimePoint {
    pub fn new(t: f64, x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("space-time point needs d >= 1"));
        }
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("space-time point has non-finite coordinates"));
        }
        Ok(Self { t, x })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// A point where a field is undefined. `t = None` means every time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularPoint {
    pub t: Option<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Analytic,
    Grid,
}

/// An evaluable pair `(sigma, b)` with declared ellipticity `delta`.
///
/// `sigma(t, x)` is a `d x d1` matrix stored row-major, `b(t, x)` a
/// `d`-vector. Evaluators are immutable and may be shared across threads.
/// Every evaluation is checked for finiteness, so callers never see NaN or
/// infinite coefficients; points in the singular set report
/// [`Error::Singular`].
#[derive(Clone)]
pub struct CoefficientField {
    name: String,
    dim: usize,
    noise_dim: usize,
    delta: f64,
    kind: FieldKind,
    sigma: Arc<MatrixFn>,
    drift: Arc<VectorFn>,
    singular_set: Vec<SingularPoint>,
    time_independent: bool,
    drift_support: Option<Vec<(f64, f64)>>,
    dsigma_bounded_sup: Option<Arc<TimeFn>>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("delta", &self.delta)
            .field("kind", &self.kind)
            .field("singular_set", &self.singular_set)
            .finish_non_exhaustive()
    }
}

impl CoefficientField {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        noise_dim: usize,
        sigma: Arc<MatrixFn>,
        drift: Arc<VectorFn>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("field dimension must be at least 1"));
        }
        if noise_dim < dim {
            return Err(Error::invalid(format!(
                "noise dimension {noise_dim} is smaller than d = {dim}"
            )));
        }
        Ok(Self {
            name: name.into(),
            dim,
            noise_dim,
            delta: 1.0,
            kind: FieldKind::Analytic,
            sigma,
            drift,
            singular_set: Vec::new(),
            time_independent: false,
            drift_support: None,
            dsigma_bounded_sup: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn kind(&self) -> FieldKind {
        self.kind
    }
    pub fn singular_set(&self) -> &[SingularPoint] {
        &self.singular_set
    }
    pub fn is_time_independent(&self) -> bool {
        self.time_independent
    }
    /// Spatial bounding box outside of which the drift vanishes, if known.
    pub fn drift_support(&self) -> Option<&[(f64, f64)]> {
        self.drift_support.as_deref()
    }
    /// `t -> ess sup_x |D sigma_B(t, x)|` when a split of `D sigma` is declared.
    pub fn dsigma_bounded_sup(&self) -> Option<&Arc<TimeFn>> {
        self.dsigma_bounded_sup.as_ref()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }
    pub fn with_kind(mut self, kind: FieldKind) -> Self {
        self.kind = kind;
        self
    }
    pub fn with_singular_point(mut self, point: SingularPoint) -> Self {
        self.singular_set.push(point);
        self
    }
    pub fn with_singular_set(mut self, set: Vec<SingularPoint>) -> Self {
        self.singular_set = set;
        self
    }
    pub fn with_time_independent(mut self, yes: bool) -> Self {
        self.time_independent = yes;
        self
    }
    pub fn with_drift_support(mut self, support: Option<Vec<(f64, f64)>>) -> Self {
        self.drift_support = support;
        self
    }
    pub fn with_dsigma_bounded_sup(mut self, f: Option<Arc<TimeFn>>) -> Self {
        self.dsigma_bounded_sup = f;
        self
    }

    /// Replaces the drift, keeping the diffusion and its metadata.
    pub fn with_drift_fn(mut self, drift: Arc<VectorFn>) -> Self {
        self.drift = drift;
        self.drift_support = None;
        self
    }

    /// Replaces the diffusion. `noise_dim` may change.
    pub fn with_sigma_fn(mut self, noise_dim: usize, sigma: Arc<MatrixFn>, delta: f64) -> Self {
        self.noise_dim = noise_dim;
        self.sigma = sigma;
        self.delta = delta;
        self.dsigma_bounded_sup = None;
        self
    }

    /// Takes the diffusion of `sigma_from` and the drift of `drift_from`.
    pub fn combine(sigma_from: &CoefficientField, drift_from: &CoefficientField) -> Result<Self> {
        if sigma_from.dim != drift_from.dim {
            return Err(Error::invalid("cannot combine fields of different dimension"));
        }
        let mut singular = sigma_from.singular_set.clone();
        singular.extend(drift_from.singular_set.iter().cloned());
        Ok(Self {
            name: format!("{}+{}", sigma_from.name, drift_from.name),
            dim: sigma_from.dim,
            noise_dim: sigma_from.noise_dim,
            delta: sigma_from.delta,
            kind: if sigma_from.kind == FieldKind::Grid || drift_from.kind == FieldKind::Grid {
                FieldKind::Grid
            } else {
                FieldKind::Analytic
            },
            sigma: sigma_from.sigma.clone(),
            drift: drift_from.drift.clone(),
            singular_set: singular,
            time_independent: sigma_from.time_independent && drift_from.time_independent,
            drift_support: drift_from.drift_support.clone(),
            dsigma_bounded_sup: sigma_from.dsigma_bounded_sup.clone(),
        })
    }

    pub(crate) fn sigma_fn(&self) -> &Arc<MatrixFn> {
        &self.sigma
    }
    pub(crate) fn drift_fn(&self) -> &Arc<VectorFn> {
        &self.drift
    }

    /// Evaluates `sigma(t, x)` (row-major `d x d1`) into `out`.
    pub fn sigma_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim * self.noise_dim);
        (self.sigma)(t, x, out)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "sigma",
                t,
                x: x.to_vec(),
            });
        }
        Ok(())
    }

    /// Evaluates `b(t, x)` into `out`.
    pub fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        (self.drift)(t, x, out)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "drift",
                t,
                x: x.to_vec(),
            });
        }
        Ok(())
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut buf = vec![0.0; self.dim * self.noise_dim];
        self.sigma_into(t, x, &mut buf)?;
        Ok(DMatrix::from_row_slice(self.dim, self.noise_dim, &buf))
    }

    pub fn drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut buf = vec![0.0; self.dim];
        self.drift_into(t, x, &mut buf)?;
        Ok(buf)
    }

    /// Diffusion matrix `a = sigma sigma^*`.
    pub fn diffusion(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        let s = self.sigma(t, x)?;
        Ok(&s * s.transpose())
    }

    pub fn drift_norm(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(norm(&self.drift(t, x)?))
    }

    /// True if `(t, x)` coincides with a declared singular point.
    pub fn is_singular_at(&self, t: f64, x: &[f64]) -> bool {
        self.singular_set
            .iter()
            .any(|p| p.t.is_none_or(|pt| pt == t) && p.x.as_slice() == x)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Identity diffusion `sigma = [I_d | 0]` of shape `d x d1`.
pub(crate) fn identity_sigma(dim: usize, noise_dim: usize) -> Arc<MatrixFn> {
    Arc::new(move |_t, _x, out: &mut [f64]| {
        out.fill(0.0);
        for i in 0..dim {
            out[i * noise_dim + i] = 1.0;
        }
        Ok(())
    })
}

pub(crate) fn zero_vector() -> Arc<VectorFn> {
    Arc::new(|_t, _x, out: &mut [f64]| {
        out.fill(0.0);
        Ok(())
    })
}
