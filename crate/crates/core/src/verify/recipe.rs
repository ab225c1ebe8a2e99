use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{self, CoefficientField, Direction, GridRole, Interpolation};
use crate::mollify::{mollify, Kernel, MollifyConfig};

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

/// Named field from the example zoo, or a grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `sigma = I`, `b = 0`.
    #[serde(alias = "bm", alias = "zero")]
    Brownian {
        #[serde(default = "one")]
        d: usize,
    },
    /// Rows of `sigma` and a constant drift.
    Constant { sigma: Vec<Vec<f64>>, drift: Vec<f64> },
    #[serde(alias = "ou")]
    OrnsteinUhlenbeck {
        #[serde(default = "one")]
        d: usize,
        #[serde(default = "one_f")]
        rate: f64,
    },
    SigmaVmo {
        #[serde(default = "half")]
        radius: f64,
        #[serde(default = "one_f")]
        amplitude: f64,
        d: usize,
    },
    Inverse {
        gamma: f64,
        d: usize,
        #[serde(default)]
        direction: Direction,
    },
    Parabolic {
        gamma: f64,
        d: usize,
        #[serde(default)]
        direction: Direction,
    },
    Fractal { p: f64, d: usize, n_max: usize },
    Counterexample { d: usize },
    SmoothBump { amplitude: f64, radius: f64, d: usize },
    Grid {
        path: PathBuf,
        #[serde(default)]
        interpolation: Interpolation,
        role: GridRole,
    },
}

impl FieldSpec {
    pub fn build(&self) -> Result<CoefficientField> {
        match self {
            FieldSpec::Brownian { d } => {
                if *d == 0 {
                    return Err(Error::invalid("dimension must be at least 1"));
                }
                Ok(fields::brownian(*d))
            }
            FieldSpec::Constant { sigma, drift } => {
                let rows = sigma.len();
                let cols = sigma.first().map_or(0, Vec::len);
                if rows == 0 || cols == 0 || sigma.iter().any(|r| r.len() != cols) {
                    return Err(Error::invalid("sigma must be a nonempty rectangular matrix"));
                }
                let m = DMatrix::from_row_iterator(rows, cols, sigma.iter().flatten().copied());
                fields::constant_field(m, drift.clone())
            }
            FieldSpec::OrnsteinUhlenbeck { d, rate } => Ok(fields::ornstein_uhlenbeck(*d, *rate)),
            FieldSpec::SigmaVmo { radius, amplitude, d } => fields::build_sigma_vmo(*radius, *amplitude, *d),
            FieldSpec::Inverse { gamma, d, direction } => fields::build_drift_inverse(*gamma, *d, direction.clone()),
            FieldSpec::Parabolic { gamma, d, direction } => fields::build_drift_parabolic(*gamma, *d, direction.clone()),
            FieldSpec::Fractal { p, d, n_max } => {
                let radii = fields::fractal_radii(*d, *p, *n_max)?;
                fields::build_fractal_drift(*p, &radii, *d)
            }
            FieldSpec::Counterexample { d } => fields::build_counterexample_drift(*d),
            FieldSpec::SmoothBump { amplitude, radius, d } => fields::smooth_bump_drift(*amplitude, *radius, *d),
            FieldSpec::Grid { path, interpolation, role } => fields::load_grid_field(path, *interpolation, *role),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifySpec {
    pub n: u32,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default = "default_mollify_nodes")]
    pub nodes_per_axis: usize,
}

fn default_mollify_nodes() -> usize {
    MollifyConfig::default().nodes_per_axis
}

/// A field, optionally with `sigma` taken from a second field, optionally
/// mollified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRecipe {
    pub field: FieldSpec,
    #[serde(default)]
    pub sigma: Option<FieldSpec>,
    #[serde(default)]
    pub mollify: Option<MollifySpec>,
}

impl FieldRecipe {
    pub fn plain(field: FieldSpec) -> Self {
        Self { field, sigma: None, mollify: None }
    }

    pub fn build(&self) -> Result<CoefficientField> {
        let mut f = self.field.build()?;
        if let Some(s) = &self.sigma {
            f = CoefficientField::combine(&s.build()?, &f)?;
        }
        if let Some(m) = &self.mollify {
            f = mollify(&f, m.n, &MollifyConfig { kernel: m.kernel, nodes_per_axis: m.nodes_per_axis })?;
        }
        Ok(f)
    }
}
