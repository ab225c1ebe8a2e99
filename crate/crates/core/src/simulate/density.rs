use serde::{Deserialize, Serialize};

use super::ensemble::PathSource;
use crate::error::{Error, Result};
use crate::quadrature::tensor_indices;

/// Binned Gaussian kernel density estimate of `x_t` on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub t: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins: usize,
    pub bandwidth: Vec<f64>,
    /// Row-major values at bin centres.
    pub values: Vec<f64>,
    pub p_prime: f64,
    pub lp_norm: f64,
    /// Total mass on the grid; 1 up to truncation.
    pub mass: f64,
    pub finite: bool,
}

impl DensityReport {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a) / self.bins as f64).product()
    }

    pub fn centre(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + (i as f64 + 0.5) * (self.hi[a] - self.lo[a]) / self.bins as f64)
            .collect()
    }

    /// `int |p_hat - p|` by the midpoint rule on the estimate's grid.
    pub fn l1_distance(&self, pdf: impl Fn(&[f64]) -> f64) -> f64 {
        let cell = self.cell_volume();
        tensor_indices(self.bins, self.dim())
            .zip(&self.values)
            .map(|(idx, v)| (v - pdf(&self.centre(&idx))).abs())
            .sum::<f64>()
            * cell
    }
}

/// Default bins per axis.
fn default_bins(dim: usize) -> usize {
    match dim {
        1 => 1024,
        2 => 256,
        _ => 48,
    }
}

/// States of all paths at the given steps; one `paths x d` block per step.
pub(crate) fn states_at_steps<S: PathSource>(src: &S, steps: &[usize]) -> Result<Vec<Vec<f64>>> {
    let per_path = src.map_paths(|p| Ok(steps.iter().flat_map(|&k| p.state(k).to_vec()).collect::<Vec<f64>>()))?;
    let d = src.dim();
    Ok((0..steps.len())
        .map(|j| per_path.iter().flat_map(|row| row[j * d..(j + 1) * d].to_vec()).collect())
        .collect())
}

/// Silverman's rule per axis.
pub fn silverman_bandwidth(samples: &[f64], dim: usize) -> Vec<f64> {
    let m = samples.len() / dim;
    let factor = (4.0 / ((dim as f64 + 2.0) * m as f64)).powf(1.0 / (dim as f64 + 4.0));
    (0..dim)
        .map(|a| {
            let col: Vec<f64> = samples.iter().skip(a).step_by(dim).copied().collect();
            crate::stats::sample_variance(&col).sqrt() * factor
        })
        .collect()
}

pub(crate) fn kde(samples: &[f64], dim: usize, t: f64, bandwidth: Option<&[f64]>, p_prime: f64, bins: Option<usize>) -> Result<DensityReport> {
    if !(p_prime >= 1.0) {
        return Err(Error::invalid("p' must be at least 1"));
    }
    let m = samples.len() / dim;
    if m < 2 {
        return Err(Error::invalid("density estimate needs at least two samples"));
    }
    let h: Vec<f64> = match bandwidth {
        Some(b) if b.len() == dim => b.to_vec(),
        Some(_) => return Err(Error::invalid("bandwidth has the wrong dimension")),
        None => silverman_bandwidth(samples, dim),
    };
    if h.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("degenerate bandwidth (zero sample spread); pass one explicitly"));
    }
    let bins = bins.unwrap_or_else(|| default_bins(dim));
    if bins < 2 {
        return Err(Error::invalid("need at least two bins per axis"));
    }
    let mut lo = Vec::with_capacity(dim);
    let mut hi = Vec::with_capacity(dim);
    for a in 0..dim {
        let col: Vec<f64> = samples.iter().skip(a).step_by(dim).copied().collect();
        let mean = col.iter().sum::<f64>() / m as f64;
        let sd = crate::stats::sample_variance(&col).sqrt();
        let (mn, mx) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        lo.push((mean - 6.0 * sd).min(mn - 4.0 * h[a]));
        hi.push((mean + 6.0 * sd).max(mx + 4.0 * h[a]));
    }
    let delta: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a) / bins as f64).collect();
    let total = bins.pow(dim as u32);
    let mut grid = vec![0.0; total];
    // linear binning onto bin centres
    for x in samples.chunks_exact(dim) {
        let mut base = vec![0usize; dim];
        let mut frac = vec![0.0; dim];
        for a in 0..dim {
            let s = ((x[a] - lo[a]) / delta[a] - 0.5).clamp(0.0, (bins - 1) as f64);
            let i0 = (s.floor() as usize).min(bins - 2);
            base[a] = i0;
            frac[a] = s - i0 as f64;
        }
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut off = 0;
            for a in 0..dim {
                let up = (corner >> a) & 1;
                w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
                off = off * bins + base[a] + up;
            }
            grid[off] += w;
        }
    }
    // separable Gaussian smoothing with a unit-sum discrete kernel
    let mut buf = vec![0.0; bins];
    for a in 0..dim {
        let half = ((5.0 * h[a] / delta[a]).ceil() as usize).min(bins);
        let mut kernel: Vec<f64> = (0..=2 * half)
            .map(|j| {
                let u = (j as f64 - half as f64) * delta[a] / h[a];
                (-0.5 * u * u).exp()
            })
            .collect();
        let ks: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= ks);
        let stride = bins.pow((dim - 1 - a) as u32);
        for start in 0..total {
            // visit each line along axis `a` once, from its first element
            if (start / stride) % bins != 0 {
                continue;
            }
            for i in 0..bins {
                let mut acc = 0.0;
                let jlo = i.saturating_sub(half);
                let jhi = (i + half).min(bins - 1);
                for j in jlo..=jhi {
                    acc += kernel[j + half - i] * grid[start + j * stride];
                }
                buf[i] = acc;
            }
            for i in 0..bins {
                grid[start + i * stride] = buf[i];
            }
        }
    }
    let cell: f64 = delta.iter().product();
    let norm = 1.0 / (m as f64 * cell);
    grid.iter_mut().for_each(|v| *v *= norm);
    let mass = grid.iter().sum::<f64>() * cell;
    let lp_norm = (grid.iter().map(|v| v.powf(p_prime)).sum::<f64>() * cell).powf(1.0 / p_prime);
    Ok(DensityReport {
        t,
        lo,
        hi,
        bins,
        bandwidth: h,
        values: grid,
        p_prime,
        lp_norm,
        mass,
        finite: lp_norm.is_finite(),
    })
}

/// KDE of `x_t` with an `L_{p'}` norm; `t` must be on the simulation grid.
pub fn density_estimate<S: PathSource>(src: &S, t: f64, bandwidth: Option<&[f64]>, p_prime: f64, bins: Option<usize>) -> Result<DensityReport> {
    let k = src.grid().index_of(t)?;
    let states = states_at_steps(src, &[k])?;
    kde(&states[0], src.dim(), t, bandwidth, p_prime, bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeIntegralReport {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub p_prime: f64,
    pub q_prime: f64,
    /// Trapezoid over the sampled times plus the tail near 0.
    pub integral: f64,
    /// Power-law extrapolation of `int_{t0}^{times[0]}` from the first two times.
    pub tail: f64,
    pub finite: bool,
}

/// `int_{t0}^{T} ||p_t||_{L_{p'}}^{q'} dt` from KDE norms at increasing grid
/// times. Below the first time the integrand is extended as a power law
/// fitted to the first two points.
pub fn time_integrated_norm<S: PathSource>(src: &S, times: &[f64], p_prime: f64, q_prime: f64, bins: Option<usize>) -> Result<TimeIntegralReport> {
    if times.len() < 2 || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("need at least two increasing times"));
    }
    if !(q_prime >= 1.0) {
        return Err(Error::invalid("q' must be at least 1"));
    }
    let grid = src.grid();
    let steps: Vec<usize> = times.iter().map(|&t| grid.index_of(t)).collect::<Result<_>>()?;
    if steps[0] == 0 {
        return Err(Error::invalid("the first time must be after the start"));
    }
    let states = states_at_steps(src, &steps)?;
    let norms: Vec<f64> = states
        .iter()
        .zip(times)
        .map(|(s, &t)| kde(s, src.dim(), t, None, p_prime, bins).map(|r| r.lp_norm))
        .collect::<Result<_>>()?;
    let g: Vec<f64> = norms.iter().map(|n| n.powf(q_prime)).collect();
    let mut integral = 0.0;
    for j in 1..times.len() {
        integral += 0.5 * (g[j] + g[j - 1]) * (times[j] - times[j - 1]);
    }
    let s0 = times[0] - grid.t0;
    let s1 = times[1] - grid.t0;
    let beta = -(g[1] / g[0]).ln() / (s1 / s0).ln();
    let tail = if beta < 1.0 { g[0] * s0 / (1.0 - beta) } else { f64::INFINITY };
    let total = integral + tail;
    Ok(TimeIntegralReport {
        times: times.to_vec(),
        norms,
        p_prime,
        q_prime,
        integral: total,
        tail,
        finite: total.is_finite(),
    })
}
