use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{CoefficientField, VectorFn};
use crate::quadrature::{composite, tensor_indices, GaussLegendre};

/// Numerical settings of [`split_drift`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Piecewise-constant cells of `lambda` and `b_tilde` on the horizon.
    pub time_cells: usize,
    /// Gauss-Legendre route: panels per space axis and nodes per panel.
    pub gl_panels: usize,
    pub gl_nodes: usize,
    /// Gauss-Legendre route: panels in time.
    pub gl_time_panels: usize,
    /// Midpoint route: cells per space axis.
    pub midpoint_cells: usize,
    /// Simpson route: intervals in time (rounded up to even).
    pub simpson_intervals: usize,
    /// Lattice points per axis for the sup defining `b_tilde`.
    pub sup_points_per_axis: usize,
    /// Integration box; defaults to the declared drift support.
    pub support: Option<Vec<(f64, f64)>>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            time_cells: 64,
            gl_panels: 8,
            gl_nodes: 8,
            gl_time_panels: 16,
            midpoint_cells: 200,
            simpson_intervals: 128,
            sup_points_per_axis: 41,
            support: None,
        }
    }
}

/// Piecewise-constant function on `edges[0] .. edges[n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeProfile {
    pub edges: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeProfile {
    pub fn new(edges: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if edges.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::invalid("profile needs one more edge than values"));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("profile edges must increase"));
        }
        Ok(Self { edges, values })
    }

    pub fn uniform(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        let edges = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        Self::new(edges, values)
    }

    /// Value of the cell containing `t`, clamped to the end cells.
    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.edges.partition_point(|e| *e <= t).saturating_sub(1);
        self.values[i.min(self.values.len() - 1)]
    }

    /// `int_{-inf}^{s} f^2` with `f = 0` outside the edges.
    fn square_primitive(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let (a, b) = (self.edges[i], self.edges[i + 1]);
            if s <= a {
                break;
            }
            acc += v * v * (s.min(b) - a);
        }
        acc
    }

    pub fn square_integral(&self) -> f64 {
        self.square_primitive(*self.edges.last().expect("nonempty"))
    }
}

/// `sup_s int_s^{s+t} f^2(u) du` for a profile vanishing outside its edges.
/// The window integral is piecewise linear in `s` with kinks where `s` or
/// `s + t` crosses an edge, so checking those positions is exact.
pub fn beta_modulus(profile: &TimeProfile, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    profile
        .edges
        .iter()
        .flat_map(|e| [*e, e - t])
        .map(|s| profile.square_primitive(s + t) - profile.square_primitive(s))
        .fold(0.0, f64::max)
}

/// Threshold split `b = b_M + b_B` with `b_M = b 1{|b| >= lambda(t)}`.
#[derive(Debug, Clone)]
pub struct DriftSplit {
    pub p: f64,
    pub n_hat: f64,
    pub horizon: (f64, f64),
    pub lambda: TimeProfile,
    /// Sampled lower bound of `ess sup_x |b_B(t, x)|` per cell.
    pub b_tilde: TimeProfile,
    pub b_m: CoefficientField,
    pub b_b: CoefficientField,
    /// `(int b_tilde^2 dt)^{1/2}`
    pub b_b_norm: f64,
    /// `int lambda^2 dt` by tensor Gauss-Legendre in space and time.
    pub lambda_sq_integral: f64,
    /// `N^2 int (int |b|^p dx)^{q/p} dt`, `q = 2p/(p - d)`, by midpoint rule in
    /// space and Simpson in time.
    pub rhs_integral: f64,
}

impl DriftSplit {
    pub fn beta_modulus(&self, t: f64) -> f64 {
        beta_modulus(&self.b_tilde, t)
    }

    pub fn relative_gap(&self) -> f64 {
        let scale = self.lambda_sq_integral.abs().max(self.rhs_integral.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.lambda_sq_integral - self.rhs_integral).abs() / scale
        }
    }
}

fn lp_integrand(b: &CoefficientField, t: f64, x: &[f64], p: f64, out: &mut [f64], hits: &mut usize) -> Result<f64> {
    match b.drift_into(t, x, out) {
        Ok(()) => Ok(out.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p)),
        Err(Error::Singular { .. } | Error::NonFinite { .. }) => {
            *hits += 1;
            Ok(0.0)
        }
        Err(e) => Err(e),
    }
}

/// `int |b(t, x)|^p dx` by composite tensor Gauss-Legendre.
fn lp_gauss(b: &CoefficientField, t: f64, p: f64, support: &[(f64, f64)], cfg: &SplitConfig) -> Result<f64> {
    let rule = GaussLegendre::new(cfg.gl_nodes);
    let axes: Vec<(Vec<f64>, Vec<f64>)> = support.iter().map(|(lo, hi)| composite(&rule, *lo, *hi, cfg.gl_panels)).collect();
    let n = axes[0].0.len();
    let mut x = vec![0.0; support.len()];
    let mut out = vec![0.0; support.len()];
    let (mut sum, mut hits, mut total) = (0.0, 0, 0);
    for idx in tensor_indices(n, support.len()) {
        let mut w = 1.0;
        for (axis, &i) in idx.iter().enumerate() {
            x[axis] = axes[axis].0[i];
            w *= axes[axis].1[i];
        }
        sum += w * lp_integrand(b, t, &x, p, &mut out, &mut hits)?;
        total += 1;
    }
    super::sampler::check_hits(hits, total)?;
    Ok(sum)
}

/// `int |b(t, x)|^p dx` by the midpoint rule.
fn lp_midpoint(b: &CoefficientField, t: f64, p: f64, support: &[(f64, f64)], cells: usize) -> Result<f64> {
    let h: Vec<f64> = support.iter().map(|(lo, hi)| (hi - lo) / cells as f64).collect();
    let cell_volume: f64 = h.iter().product();
    let mut x = vec![0.0; support.len()];
    let mut out = vec![0.0; support.len()];
    let (mut sum, mut hits, mut total) = (0.0, 0, 0);
    for idx in tensor_indices(cells, support.len()) {
        for (axis, &i) in idx.iter().enumerate() {
            x[axis] = support[axis].0 + (i as f64 + 0.5) * h[axis];
        }
        sum += lp_integrand(b, t, &x, p, &mut out, &mut hits)?;
        total += 1;
    }
    super::sampler::check_hits(hits, total)?;
    Ok(sum * cell_volume)
}

/// Splits `b` at the level `lambda(t) = N (int |b(t, x)|^p dx)^{1/(p-d)}`.
pub fn split_drift(
    b: &CoefficientField,
    p: f64,
    n_hat: f64,
    horizon: (f64, f64),
    cfg: &SplitConfig,
) -> Result<DriftSplit> {
    use rayon::prelude::*;
    let d = b.dim() as f64;
    if !(p > d && p.is_finite()) {
        return Err(Error::invalid(format!("split needs p > d, got p = {p}, d = {d}")));
    }
    if !(n_hat > 0.0 && n_hat.is_finite()) {
        return Err(Error::invalid("N_hat must be positive"));
    }
    let (t0, t1) = horizon;
    if !(t0 < t1) {
        return Err(Error::invalid("horizon must be a nonempty interval"));
    }
    if cfg.time_cells == 0 || cfg.gl_panels == 0 || cfg.gl_nodes == 0 || cfg.midpoint_cells == 0 || cfg.gl_time_panels == 0 {
        return Err(Error::invalid("split quadrature sizes must be positive"));
    }
    let support: Vec<(f64, f64)> = cfg
        .support
        .clone()
        .or_else(|| b.drift_support().map(|s| s.to_vec()))
        .ok_or_else(|| Error::invalid("split needs a compact drift support (declare it or configure one)"))?;
    if support.len() != b.dim() {
        return Err(Error::invalid("support box has the wrong dimension"));
    }
    let lam_of = |integral: f64| n_hat * integral.powf(1.0 / (p - d));

    // route A: lambda^2 by Gauss-Legendre in time of the Gauss-Legendre slices
    let (tn, tw) = composite(&GaussLegendre::new(8), t0, t1, cfg.gl_time_panels);
    let slices: Vec<f64> = tn.par_iter().map(|&t| lp_gauss(b, t, p, &support, cfg)).collect::<Result<_>>()?;
    let lambda_sq_integral: f64 = slices.iter().zip(&tw).map(|(i, w)| w * lam_of(*i).powi(2)).sum();

    // route B: N^2 int (int |b|^p)^{q/p} with midpoint slices and Simpson in time
    let q = 2.0 * p / (p - d);
    let m = cfg.simpson_intervals.max(2).next_multiple_of(2);
    let h = (t1 - t0) / m as f64;
    let mid: Vec<f64> = (0..=m)
        .into_par_iter()
        .map(|k| lp_midpoint(b, t0 + k as f64 * h, p, &support, cfg.midpoint_cells))
        .collect::<Result<_>>()?;
    let rhs_integral = n_hat * n_hat
        * h
        / 3.0
        * mid
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let c = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                c * v.powf(q / p)
            })
            .sum::<f64>();

    // cellwise lambda for the split itself
    let cells = cfg.time_cells;
    let dt = (t1 - t0) / cells as f64;
    let lam_cells: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|i| lp_gauss(b, t0 + (i as f64 + 0.5) * dt, p, &support, cfg).map(lam_of))
        .collect::<Result<_>>()?;
    let lambda = TimeProfile::uniform(t0, t1, lam_cells)?;

    let lam_profile = Arc::new(lambda.clone());
    let (src_m, lp_m) = (Arc::clone(b.drift_fn()), Arc::clone(&lam_profile));
    let drift_m: Arc<VectorFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        src_m(t, x, out)?;
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < lp_m.value_at(t) {
            out.fill(0.0);
        }
        Ok(())
    });
    let (src_b, lp_b) = (Arc::clone(b.drift_fn()), Arc::clone(&lam_profile));
    let drift_b: Arc<VectorFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        match src_b(t, x, out) {
            Ok(()) => {}
            // |b| is infinite at a singular point, so that point belongs to b_M
            Err(Error::Singular { .. }) => {
                out.fill(0.0);
                return Ok(());
            }
            Err(e) => return Err(e),
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm >= lp_b.value_at(t) {
            out.fill(0.0);
        }
        Ok(())
    });
    let b_m = b.clone().with_name(format!("{}/M", b.name())).with_drift_fn(drift_m);
    let b_b = b
        .clone()
        .with_name(format!("{}/B", b.name()))
        .with_drift_fn(drift_b)
        .with_singular_set(Vec::new());

    // b_tilde: max of |b_B| over a lattice of the support, per cell midpoint
    let k = cfg.sup_points_per_axis.max(2);
    let tilde: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|i| {
            let t = t0 + (i as f64 + 0.5) * dt;
            let mut x = vec![0.0; support.len()];
            let mut out = vec![0.0; support.len()];
            let mut best = 0.0f64;
            for idx in tensor_indices(k, support.len()) {
                for (axis, &j) in idx.iter().enumerate() {
                    let (lo, hi) = support[axis];
                    x[axis] = lo + (hi - lo) * j as f64 / (k - 1) as f64;
                }
                b_b.drift_into(t, &x, &mut out)?;
                best = best.max(out.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let b_tilde = TimeProfile::uniform(t0, t1, tilde)?;
    let b_b_norm = b_tilde.square_integral().sqrt();
    Ok(DriftSplit {
        p,
        n_hat,
        horizon,
        lambda,
        b_tilde,
        b_m,
        b_b,
        b_b_norm,
        lambda_sq_integral,
        rhs_integral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{brownian, constant_field, smooth_bump_drift};
    use nalgebra::DMatrix;

    #[test]
    fn beta_examples() {
        let ones = TimeProfile::uniform(0.0, 1.0, vec![1.0]).unwrap();
        assert_eq!(beta_modulus(&ones, 0.0), 0.0);
        assert!((beta_modulus(&ones, 2.0) - 1.0).abs() < 1e-15);
        let c = TimeProfile::uniform(0.0, 4.0, vec![3.0; 8]).unwrap();
        assert!((beta_modulus(&c, 0.7) - 9.0 * 0.7).abs() < 1e-12);
        let bumpy = TimeProfile::uniform(0.0, 3.0, vec![0.0, 2.0, 1.0]).unwrap();
        // best window of length 1.5 covers [1, 2.5]: 4 + 0.5
        assert!((beta_modulus(&bumpy, 1.5) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_splits_trivially() {
        let b = brownian(2).with_drift_support(Some(vec![(-1.0, 1.0); 2]));
        let s = split_drift(&b, 4.0, 1.0, (0.0, 1.0), &SplitConfig { midpoint_cells: 20, ..Default::default() }).unwrap();
        assert!(s.lambda.values.iter().all(|v| *v == 0.0));
        assert_eq!(s.b_m.drift(0.3, &[0.1, 0.2]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(s.b_b.drift(0.3, &[0.1, 0.2]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(s.b_b_norm, 0.0);
    }

    #[test]
    fn bounded_drift_below_threshold_is_all_bounded_part() {
        let b = constant_field(DMatrix::identity(2, 2), vec![0.5, 0.0])
            .unwrap()
            .with_drift_support(Some(vec![(-1.0, 1.0); 2]));
        // int |b|^4 over the box = 0.25, lambda = 10 * 0.25^{1/2} = 5 > 0.5
        let s = split_drift(&b, 4.0, 10.0, (0.0, 1.0), &SplitConfig { midpoint_cells: 20, ..Default::default() }).unwrap();
        assert!((s.lambda.value_at(0.5) - 5.0).abs() < 1e-12);
        assert_eq!(s.b_m.drift(0.5, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(s.b_b.drift(0.5, &[0.0, 0.0]).unwrap(), vec![0.5, 0.0]);
        assert!((s.b_b_norm - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_quadratures_agree_for_smooth_bump() {
        let b = smooth_bump_drift(3.0, 0.8, 2).unwrap();
        let s = split_drift(&b, 4.0, 1.0, (0.0, 1.0), &SplitConfig::default()).unwrap();
        assert!(s.relative_gap() < 5e-3, "{} vs {}", s.lambda_sq_integral, s.rhs_integral);
        // reconstruction and threshold invariants
        for (t, x) in [(0.1, [0.0, 0.0]), (0.9, [0.5, 0.1]), (0.5, [0.7, -0.3])] {
            let full = b.drift(t, &x).unwrap();
            let m = s.b_m.drift(t, &x).unwrap();
            let bb = s.b_b.drift(t, &x).unwrap();
            for k in 0..2 {
                assert_eq!(m[k] + bb[k], full[k]);
            }
            assert!(crate::fields::norm(&bb) <= s.lambda.value_at(t));
        }
    }

    #[test]
    fn rejects_p_at_most_d() {
        let b = smooth_bump_drift(1.0, 0.5, 2).unwrap();
        assert!(split_drift(&b, 2.0, 1.0, (0.0, 1.0), &SplitConfig::default()).is_err());
    }
}
