//! Probe generation and stratified ball averages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::rng::{mix_seed, UniformStream};

/// Which balls and cylinders an estimator probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub seed: u64,
    /// Points per ball average, rounded up to an even number.
    pub points_per_ball: usize,
    /// Radii `r_max * 2^-k` for `k < radius_levels`.
    pub radius_levels: usize,
    /// Jittered lattice points per axis; 0 disables the lattice.
    pub lattice_per_axis: usize,
    /// Half width of the lattice box; defaults to the drift support or 1.
    pub lattice_half_width: Option<f64>,
    /// Times probed. Empty means `[0]`.
    pub times: Vec<f64>,
    pub extra_centers: Vec<Vec<f64>>,
    pub include_singular: bool,
    /// One extra pass around the running argmax.
    pub refine: bool,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            points_per_ball: 4096,
            radius_levels: 6,
            lattice_per_axis: 4,
            lattice_half_width: None,
            times: vec![0.0],
            extra_centers: Vec::new(),
            include_singular: true,
            refine: true,
        }
    }
}

impl SamplerSpec {
    /// Only the given centres, no lattice, no refinement.
    pub fn centred_at(centres: Vec<Vec<f64>>) -> Self {
        Self {
            lattice_per_axis: 0,
            include_singular: false,
            refine: false,
            extra_centers: centres,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        if self.points_per_ball < 2 {
            return Err(Error::invalid("points_per_ball must be at least 2"));
        }
        if self.radius_levels == 0 {
            return Err(Error::invalid("radius_levels must be at least 1"));
        }
        if self.extra_centers.iter().any(|c| c.len() != dim) {
            return Err(Error::invalid("extra centre has the wrong dimension"));
        }
        if let Some(h) = self.lattice_half_width {
            if !(h > 0.0) {
                return Err(Error::invalid("lattice_half_width must be positive"));
            }
        }
        Ok(())
    }

    pub(crate) fn times(&self) -> Vec<f64> {
        if self.times.is_empty() {
            vec![0.0]
        } else {
            self.times.clone()
        }
    }

    pub(crate) fn radii(&self, r_max: f64) -> Vec<f64> {
        (0..self.radius_levels).map(|k| r_max * 0.5f64.powi(k as i32)).collect()
    }

    /// Lattice, singular points and extra centres, in that order.
    pub(crate) fn centres(&self, field: &CoefficientField) -> Vec<Vec<f64>> {
        let dim = field.dim();
        let mut out = Vec::new();
        let n = self.lattice_per_axis;
        if n > 0 {
            let half = self.lattice_half_width.unwrap_or_else(|| {
                field
                    .drift_support()
                    .map(|s| s.iter().map(|(lo, hi)| lo.abs().max(hi.abs())).fold(0.0, f64::max))
                    .filter(|h| *h > 0.0)
                    .unwrap_or(1.0)
            });
            let cell = 2.0 * half / n as f64;
            let mut rng = UniformStream::new(mix_seed(&[self.seed, 0x1a77]), 0);
            let total = n.pow(dim as u32);
            for idx in 0..total {
                let mut rem = idx;
                let mut c = vec![0.0; dim];
                for axis in (0..dim).rev() {
                    let i = rem % n;
                    rem /= n;
                    let jitter = 0.5 * (rng.open01() - 0.5);
                    c[axis] = -half + (i as f64 + 0.5 + jitter) * cell;
                }
                out.push(c);
            }
        }
        if self.include_singular {
            out.extend(field.singular_set().iter().map(|s| s.x.clone()));
        }
        out.extend(self.extra_centers.iter().cloned());
        out
    }

    pub(crate) fn even_points(&self) -> usize {
        self.points_per_ball + self.points_per_ball % 2
    }
}

/// Weighted sample of a ball along antithetic pairs of rays, with
/// stratified radii on each ray. With a pole inside the ball the rays start
/// at the pole, so integrable point singularities there are damped by the
/// Jacobian and integrands radial about the pole have no angular variance.
#[derive(Debug, Clone)]
pub(crate) struct BallSample {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Points per antithetic ray pair.
    pub group: usize,
    pub has_pole: bool,
}

impl BallSample {
    pub fn new(centre: &[f64], radius: f64, pole: Option<&[f64]>, n: usize, seed: u64) -> Self {
        let dim = centre.len();
        let per_ray = ((n as f64).sqrt() / 2.0).round().max(1.0) as usize;
        let pairs = n.div_ceil(2 * per_ray).max(1);
        let mut rng = UniformStream::new(seed, 0);
        let mut points = Vec::with_capacity(2 * pairs * per_ray * dim);
        let mut weights = Vec::with_capacity(2 * pairs * per_ray);
        let mut dir = vec![0.0; dim];
        let origin = pole.unwrap_or(centre);
        let offset: Vec<f64> = origin.iter().zip(centre).map(|(a, b)| a - b).collect();
        let ww: f64 = offset.iter().map(|a| a * a).sum();
        for _ in 0..pairs {
            loop {
                for d in dir.iter_mut() {
                    *d = rng.normal();
                }
                let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                if len > 1e-12 {
                    dir.iter_mut().for_each(|d| *d /= len);
                    break;
                }
            }
            for sign in [1.0, -1.0] {
                let wd: f64 = offset.iter().zip(&dir).map(|(a, b)| sign * a * b).sum();
                let exit = if pole.is_some() { -wd + (wd * wd - ww + radius * radius).max(0.0).sqrt() } else { radius };
                let scale = (exit / radius).powi(dim as i32);
                let start = weights.len();
                for k in 0..per_ray {
                    let v = (k as f64 + rng.open01()) / per_ray as f64;
                    points.extend(origin.iter().zip(&dir).map(|(o, d)| o + sign * exit * v * d));
                    weights.push(dim as f64 * v.powi(dim as i32 - 1));
                }
                // radial weights normalized to unit mean on every ray
                let norm = scale * per_ray as f64 / weights[start..].iter().sum::<f64>();
                weights[start..].iter_mut().for_each(|w| *w *= norm);
            }
        }
        Self { dim, points, weights, group: 2 * per_ray, has_pole: pole.is_some() }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

/// Weighted mean of `values` with an error estimate from differences between
/// neighbouring ray pairs. `None` entries are points where the integrand was
/// undefined; they count as zero.
///
/// Without a pole the weights sum to the point count, so constants are
/// reproduced exactly. With a pole the ray lengths vary, and their known
/// mean (`E (R / rho)^d = 1`) is used as a regression control variate.
pub(crate) fn weighted_mean(sample: &BallSample, values: &[Option<f64>]) -> (f64, f64) {
    let n = sample.len();
    let g = sample.group;
    let groups = n / g;
    let mut y = Vec::with_capacity(groups);
    let mut w = Vec::with_capacity(groups);
    for k in 0..groups {
        let range = g * k..g * k + g;
        y.push(range.clone().map(|i| sample.weights[i] * values[i].unwrap_or(0.0)).sum::<f64>() / g as f64);
        w.push(range.map(|i| sample.weights[i]).sum::<f64>() / g as f64);
    }
    let y_bar = y.iter().sum::<f64>() / groups as f64;
    let w_bar = w.iter().sum::<f64>() / groups as f64;
    let beta = if sample.has_pole && groups >= 3 {
        let sxy: f64 = y.iter().zip(&w).map(|(a, b)| (a - y_bar) * (b - w_bar)).sum();
        let sxx: f64 = w.iter().map(|b| (b - w_bar).powi(2)).sum();
        if sxx > 0.0 { sxy / sxx } else { 0.0 }
    } else {
        0.0
    };
    let mean = y_bar - beta * (w_bar - 1.0);
    let resid: Vec<f64> = y.iter().zip(&w).map(|(a, b)| a - beta * b).collect();
    let var: f64 = resid.chunks_exact(2).map(|c| (c[0] - c[1]).powi(2)).sum();
    (mean, var.sqrt() / groups as f64)
}

pub(crate) fn check_hits(hits: usize, total: usize) -> Result<()> {
    if hits * 100 > total {
        Err(Error::Quadrature { hits, total })
    } else {
        Ok(())
    }
}

/// Singular point inside the ball closest to its centre.
pub(crate) fn pole_for<'a>(field: &'a CoefficientField, centre: &[f64], radius: f64) -> Option<&'a [f64]> {
    field
        .singular_set()
        .iter()
        .map(|s| {
            let d2: f64 = s.x.iter().zip(centre).map(|(a, b)| (a - b).powi(2)).sum();
            (d2.sqrt(), s.x.as_slice())
        })
        .filter(|(dist, _)| *dist < radius * (1.0 - 1e-9))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, x)| x)
}

pub(crate) fn probe_seed(seed: u64, t: f64, radius: f64, centre: &[f64]) -> u64 {
    let mut parts = vec![seed, t.to_bits(), radius.to_bits()];
    parts.extend(centre.iter().map(|c| c.to_bits()));
    mix_seed(&parts)
}
