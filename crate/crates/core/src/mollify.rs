//! Approximation of the coefficients by smooth ones: convolution with a
//! rescaled bump, the time truncation `Gamma_m` with replacement matrix
//! `kappa`, the choice of `m(n)`, and sampled ellipticity checks.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{CoefficientField, MatrixFn, SingularPoint, VectorFn};
use crate::quadrature::{tensor_indices, GaussLegendre};
use crate::rng::{mix_seed, UniformStream};

/// Radial profile of the mollifier on the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(-1 / (1 - r^2))`
    #[default]
    Bump,
    /// `(1 - r^2)^k`
    Polynomial { k: u32 },
}

impl Kernel {
    fn profile(self, r2: f64) -> f64 {
        if r2 >= 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Bump => (-1.0 / (1.0 - r2)).exp(),
            Kernel::Polynomial { k } => (1.0 - r2).powi(k as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MollifyConfig {
    pub kernel: Kernel,
    /// Gauss-Legendre nodes per axis on `[-1, 1]`.
    pub nodes_per_axis: usize,
}

impl Default for MollifyConfig {
    fn default() -> Self {
        Self { kernel: Kernel::Bump, nodes_per_axis: 16 }
    }
}

/// Discrete kernel: offsets in the unit ball and weights summing to one.
#[derive(Debug, Clone)]
struct DiscreteKernel {
    dim: usize,
    offsets: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteKernel {
    fn new(dim: usize, cfg: &MollifyConfig) -> Self {
        let gl = GaussLegendre::new(cfg.nodes_per_axis);
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for idx in tensor_indices(cfg.nodes_per_axis, dim) {
            let y: Vec<f64> = idx.iter().map(|&i| gl.nodes[i]).collect();
            let r2: f64 = y.iter().map(|v| v * v).sum();
            let w = cfg.kernel.profile(r2) * idx.iter().map(|&i| gl.weights[i]).product::<f64>();
            if w > 0.0 {
                offsets.extend(y);
                weights.push(w);
            }
        }
        // unit discrete mass: constants are preserved exactly
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { dim, offsets, weights }
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn offset(&self, j: usize) -> &[f64] {
        &self.offsets[j * self.dim..(j + 1) * self.dim]
    }
}

/// Quadrature on the unit sphere for `d <= 3`: directions and weights.
fn sphere_rule(dim: usize, nodes: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let tau = 2.0 * std::f64::consts::PI;
    match dim {
        1 => Some((vec![1.0, -1.0], vec![1.0, 1.0])),
        2 => {
            let k = 2 * nodes;
            let dirs = (0..k).flat_map(|i| {
                let a = tau * i as f64 / k as f64;
                [a.cos(), a.sin()]
            });
            Some((dirs.collect(), vec![tau / k as f64; k]))
        }
        3 => {
            let gl = GaussLegendre::new(nodes);
            let k = 2 * nodes;
            let mut dirs = Vec::with_capacity(3 * k * nodes);
            let mut weights = Vec::with_capacity(k * nodes);
            for (c, w) in gl.nodes.iter().zip(&gl.weights) {
                let s = (1.0 - c * c).sqrt();
                for i in 0..k {
                    let a = tau * i as f64 / k as f64;
                    dirs.extend([s * a.cos(), s * a.sin(), *c]);
                    weights.push(w * tau / k as f64);
                }
            }
            Some((dirs, weights))
        }
        _ => None,
    }
}

/// Spatial convolution rule at scale `h`. Away from singular points it is the
/// fixed tensor rule; when singular points lie in the kernel ball it splits
/// the integrand by a partition of unity and integrates each piece in polar
/// coordinates about its point, where the `|z - s|^{1-d}` Jacobian absorbs
/// singularities up to order `|z - s|^{-(d-1)}`.
struct SpaceRule {
    dim: usize,
    h: f64,
    kernel: Kernel,
    fixed: DiscreteKernel,
    polar: Option<(Vec<f64>, Vec<f64>)>,
    radial: GaussLegendre,
    singular: Vec<Vec<f64>>,
}

impl SpaceRule {
    fn new(field: &CoefficientField, h: f64, cfg: &MollifyConfig) -> Self {
        let dim = field.dim();
        let mut singular: Vec<Vec<f64>> = Vec::new();
        for p in field.singular_set() {
            if !singular.contains(&p.x) {
                singular.push(p.x.clone());
            }
        }
        let (nodes, weights) = GaussLegendre::new(cfg.nodes_per_axis).on_interval(0.0, 1.0);
        Self {
            dim,
            h,
            kernel: cfg.kernel,
            fixed: DiscreteKernel::new(dim, cfg),
            polar: sphere_rule(dim, cfg.nodes_per_axis),
            radial: GaussLegendre { nodes, weights },
            singular,
        }
    }

    fn resolves_singularities(&self) -> bool {
        self.polar.is_some()
    }

    /// `sum_j w_j g(z_j)` with unit total weight, written to `out`.
    fn apply(
        &self,
        x: &[f64],
        out: &mut [f64],
        tmp: &mut [f64],
        g: &mut dyn FnMut(&[f64], &mut [f64]) -> Result<()>,
    ) -> Result<()> {
        let dim = self.dim;
        let h = self.h;
        let mut z = vec![0.0; dim];
        out.fill(0.0);
        let near: Vec<&[f64]> = match &self.polar {
            Some(_) => self
                .singular
                .iter()
                .filter(|s| dist2(s, x) < h * h)
                .map(|s| s.as_slice())
                .collect(),
            None => Vec::new(),
        };
        if near.is_empty() {
            for j in 0..self.fixed.len() {
                for (k, zk) in z.iter_mut().enumerate() {
                    *zk = x[k] - h * self.fixed.offset(j)[k];
                }
                g(&z, tmp)?;
                let w = self.fixed.weights[j];
                out.iter_mut().zip(tmp.iter()).for_each(|(o, v)| *o += w * v);
            }
            return Ok(());
        }
        let (dirs, dir_w) = self.polar.as_ref().expect("polar rule");
        let mut total = 0.0;
        for s in &near {
            let v: Vec<f64> = s.iter().zip(x).map(|(a, b)| a - b).collect();
            let v2: f64 = v.iter().map(|a| a * a).sum();
            for (i, wd) in dir_w.iter().enumerate() {
                let om = &dirs[i * dim..(i + 1) * dim];
                let a: f64 = v.iter().zip(om).map(|(p, q)| p * q).sum();
                // ray s + rho om leaves the ball |z - x| < h at rho = reach
                let reach = -a + (a * a + h * h - v2).max(0.0).sqrt();
                for (u, wu) in self.radial.nodes.iter().zip(&self.radial.weights) {
                    let rho = reach * u;
                    let mut r2 = 0.0;
                    for c in 0..dim {
                        z[c] = s[c] + rho * om[c];
                        let y = (x[c] - z[c]) / h;
                        r2 += y * y;
                    }
                    let kern = self.kernel.profile(r2);
                    if kern == 0.0 {
                        continue;
                    }
                    // partition of unity phi_k = |z - s_k|^{-2d} / sum_j |z - s_j|^{-2d}
                    let own = rho * rho;
                    let mut denom = 0.0;
                    for other in &near {
                        let d2 = dist2(other, &z);
                        if d2 == 0.0 {
                            denom = f64::INFINITY;
                            break;
                        }
                        denom += (own / d2).powi(dim as i32);
                    }
                    let phi = 1.0 / denom;
                    let w = wd * wu * reach * rho.powi(dim as i32 - 1) * kern * phi;
                    if w == 0.0 {
                        continue;
                    }
                    g(&z, tmp)?;
                    out.iter_mut().zip(tmp.iter()).for_each(|(o, val)| *o += w * val);
                    total += w;
                }
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
        Ok(())
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Convolution of `field` with the kernel rescaled to radius `1/n`: `sigma` in
/// `x` only, `b` in `(t, x)` (in `x` only for time-independent fields).
///
/// Every quadrature is positive with unit mass, so constants and affine
/// fields are reproduced. In `d <= 3` the rule switches to polar coordinates
/// about declared singular points inside the kernel ball, so point
/// singularities integrable against `|z|^{1-d}` are smoothed out and the
/// result declares no singular set. In higher dimensions the fixed tensor
/// rule is used throughout, and singular points reappear at the translated
/// node positions.
pub fn mollify(field: &CoefficientField, n: u32, cfg: &MollifyConfig) -> Result<CoefficientField> {
    if n == 0 {
        return Err(Error::invalid("mollification index must be at least 1"));
    }
    if cfg.nodes_per_axis == 0 {
        return Err(Error::invalid("nodes_per_axis must be positive"));
    }
    let dim = field.dim();
    let d1 = field.noise_dim();
    let h = 1.0 / n as f64;
    let rule = Arc::new(SpaceRule::new(field, h, cfg));
    let time = Arc::new(DiscreteKernel::new(1, cfg));
    let time_independent = field.is_time_independent();

    let (sig, rs) = (Arc::clone(field.sigma_fn()), Arc::clone(&rule));
    let sigma: Arc<MatrixFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        let mut tmp = vec![0.0; dim * d1];
        rs.apply(x, out, &mut tmp, &mut |z, o| sig(t, z, o))
    });
    let (drf, rd, kt) = (Arc::clone(field.drift_fn()), Arc::clone(&rule), Arc::clone(&time));
    let drift: Arc<VectorFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        let mut tmp = vec![0.0; dim];
        let mut slice = vec![0.0; dim];
        if time_independent {
            return rd.apply(x, out, &mut tmp, &mut |z, o| drf(t, z, o));
        }
        out.fill(0.0);
        for i in 0..kt.len() {
            let s = t - h * kt.offset(i)[0];
            rd.apply(x, &mut slice, &mut tmp, &mut |z, o| drf(s, z, o))?;
            let w = kt.weights[i];
            out.iter_mut().zip(&slice).for_each(|(o, v)| *o += w * v);
        }
        Ok(())
    });

    let mut singular = Vec::new();
    if !rule.resolves_singularities() {
        for p in field.singular_set() {
            for j in 0..rule.fixed.len() {
                let x: Vec<f64> = p.x.iter().zip(rule.fixed.offset(j)).map(|(a, o)| a + h * o).collect();
                if time_independent || p.t.is_none() {
                    singular.push(SingularPoint { t: p.t, x });
                } else {
                    for i in 0..time.len() {
                        singular.push(SingularPoint { t: p.t.map(|t| t + h * time.offset(i)[0]), x: x.clone() });
                    }
                }
            }
        }
    }
    let support = field.drift_support().map(|s| s.iter().map(|(lo, hi)| (lo - h, hi + h)).collect());
    Ok(CoefficientField::new(format!("{}*eta_{n}", field.name()), dim, d1, sigma, drift)?
        .with_delta(field.delta())
        .with_time_independent(time_independent)
        .with_singular_set(singular)
        .with_drift_support(support)
        .with_dsigma_bounded_sup(field.dsigma_bounded_sup().cloned()))
}

/// Largest `m >= 0` with `N_d m / n <= sqrt(delta) / 4`.
pub fn select_m(n: u64, delta: f64, n_d: f64) -> Result<u64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid("delta must lie in (0, 1]"));
    }
    if !(n_d > 0.0 && n_d.is_finite()) {
        return Err(Error::invalid("N_d must be positive"));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let bound = delta.sqrt() / 4.0;
    let ok = |m: u64| n_d * m as f64 / n as f64 <= bound;
    let mut m = (bound * n as f64 / n_d).floor().max(0.0) as u64;
    while ok(m + 1) {
        m += 1;
    }
    while m > 0 && !ok(m) {
        m -= 1;
    }
    Ok(m)
}

/// Which times keep the mollified diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GammaSet {
    /// No `D sigma` split is declared; every time is kept.
    All,
    /// `m = -1`: no time is kept.
    Empty,
    /// `{t : D~sigma_B(t) <= m}`
    Threshold { m: i64 },
}

/// Mollified field together with the truncation data.
#[derive(Debug, Clone)]
pub struct MollifiedFamily {
    pub base: CoefficientField,
    pub mollified: CoefficientField,
    pub n: u32,
    pub kernel: Kernel,
    pub m: i64,
    pub kappa: DMatrix<f64>,
}

impl MollifiedFamily {
    pub fn new(base: &CoefficientField, n: u32, m: i64, cfg: &MollifyConfig) -> Result<Self> {
        if m < -1 {
            return Err(Error::invalid("truncation level must be at least -1"));
        }
        Ok(Self {
            base: base.clone(),
            mollified: mollify(base, n, cfg)?,
            n,
            kernel: cfg.kernel,
            m,
            kappa: default_kappa(base.dim(), base.noise_dim()),
        })
    }

    pub fn with_kappa(mut self, kappa: DMatrix<f64>) -> Result<Self> {
        let (d, d1) = (self.base.dim(), self.base.noise_dim());
        if kappa.shape() != (d, d1) {
            return Err(Error::invalid("kappa has the wrong shape"));
        }
        if (&kappa * kappa.transpose() - DMatrix::identity(d, d)).abs().max() > 1e-12 {
            return Err(Error::invalid("kappa kappa^* must be the identity"));
        }
        self.kappa = kappa;
        Ok(self)
    }

    pub fn gamma_set(&self) -> GammaSet {
        if self.m < 0 {
            GammaSet::Empty
        } else if self.base.dsigma_bounded_sup().is_none() {
            GammaSet::All
        } else {
            GammaSet::Threshold { m: self.m }
        }
    }
}

/// `[I_d | 0]`
pub fn default_kappa(dim: usize, noise_dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, noise_dim, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// `sigma^(n) 1{Gamma_m}(t) + kappa 1{Gamma_m^c}(t)`, and the set used.
pub fn truncate_sigma(family: &MollifiedFamily) -> Result<(CoefficientField, GammaSet)> {
    let gamma = family.gamma_set();
    let kappa: Vec<f64> = {
        let k = &family.kappa;
        (0..k.nrows()).flat_map(|i| (0..k.ncols()).map(move |j| k[(i, j)])).collect()
    };
    let inner = Arc::clone(family.mollified.sigma_fn());
    let dsb = family.base.dsigma_bounded_sup().cloned();
    let m = family.m;
    let sigma: Arc<MatrixFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        let keep = match gamma {
            GammaSet::All => true,
            GammaSet::Empty => false,
            GammaSet::Threshold { .. } => dsb.as_ref().is_none_or(|f| f(t) <= m as f64),
        };
        if keep {
            inner(t, x, out)
        } else {
            out.copy_from_slice(&kappa);
            Ok(())
        }
    });
    let d1 = family.mollified.noise_dim();
    let delta = family.mollified.delta();
    let field = family
        .mollified
        .clone()
        .with_name(format!("{}|m={}", family.mollified.name(), m))
        .with_sigma_fn(d1, sigma, delta)
        .with_time_independent(family.mollified.is_time_independent() && matches!(gamma, GammaSet::All | GammaSet::Empty));
    Ok((field, gamma))
}

/// Box in space-time where eigenvalues are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub t: (f64, f64),
    pub x: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub min: f64,
    pub max: f64,
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Sampled eigenvalue range of `sigma sigma^*`, checked against
/// `[delta / 4, 4 / delta]`. Singular points are skipped.
pub fn ellipticity_check(field: &CoefficientField, region: &Region, samples: usize, seed: u64) -> Result<EllipticityReport> {
    if region.x.len() != field.dim() {
        return Err(Error::invalid("region has the wrong dimension"));
    }
    if samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let mut rng = UniformStream::new(mix_seed(&[seed, 0xe11]), 0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut x = vec![0.0; field.dim()];
    let mut used = 0;
    for _ in 0..samples {
        let t = region.t.0 + (region.t.1 - region.t.0) * rng.open01();
        for (xi, (a, b)) in x.iter_mut().zip(&region.x) {
            *xi = a + (b - a) * rng.open01();
        }
        let a = match field.diffusion(t, &x) {
            Ok(a) => a,
            Err(Error::Singular { .. }) => continue,
            Err(e) => return Err(e),
        };
        let eig = a.symmetric_eigenvalues();
        if eig.iter().any(|v| !v.is_finite()) {
            return Err(Error::FieldDefect(format!("non-finite eigenvalue at t = {t}, x = {x:?}")));
        }
        lo = lo.min(eig.min());
        hi = hi.max(eig.max());
        used += 1;
    }
    let delta = field.delta();
    let (lower, upper) = (delta / 4.0, 4.0 / delta);
    Ok(EllipticityReport { min: lo, max: hi, lower, upper, samples: used, pass: used > 0 && lo >= lower && hi <= upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{brownian, build_sigma_vmo, constant_field, ornstein_uhlenbeck};

    #[test]
    fn constants_are_preserved() {
        let f = constant_field(DMatrix::from_row_slice(2, 3, &[1.0, 0.2, 0.0, 0.0, 1.0, 0.3]), vec![0.5, -2.0]).unwrap();
        let g = mollify(&f, 4, &MollifyConfig::default()).unwrap();
        let x = [0.3, -0.7];
        assert!((g.sigma(0.1, &x).unwrap() - f.sigma(0.1, &x).unwrap()).abs().max() < 1e-10);
        let b = g.drift(0.1, &x).unwrap();
        assert!((b[0] - 0.5).abs() < 1e-10 && (b[1] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn affine_fields_are_unchanged() {
        let f = ornstein_uhlenbeck(3, 1.5).with_time_independent(false);
        let g = mollify(&f, 2, &MollifyConfig { nodes_per_axis: 6, ..Default::default() }).unwrap();
        let x = [0.3, -0.7, 1.1];
        let (b, e) = (g.drift(0.4, &x).unwrap(), f.drift(0.4, &x).unwrap());
        for k in 0..3 {
            assert!((b[k] - e[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn mollified_vmo_is_continuous_at_origin() {
        let f = build_sigma_vmo(0.5, 1.0, 1).unwrap();
        let g = mollify(&f, 64, &MollifyConfig::default()).unwrap();
        let a = g.sigma(0.0, &[0.0]).unwrap()[(0, 0)];
        let b = g.sigma(0.0, &[1e-4]).unwrap()[(0, 0)];
        assert!((a - b).abs() < 1e-2);
    }

    #[test]
    fn point_singularities_are_smoothed() {
        use crate::fields::{build_drift_inverse, build_fractal_drift, fractal_radii, Direction};
        let f = build_drift_inverse(1.0, 2, Direction::RadialIn).unwrap();
        let g = mollify(&f, 4, &MollifyConfig::default()).unwrap();
        assert!(g.singular_set().is_empty());
        // odd integrand: zero at the centre; bounded and continuous nearby
        assert!(norm(&g.drift(0.0, &[0.0, 0.0]).unwrap()) < 1e-10);
        let near = norm(&g.drift(0.0, &[1e-3, 0.0]).unwrap());
        let nearer = norm(&g.drift(0.0, &[5e-4, 0.0]).unwrap());
        assert!(near < 0.1 && (near / nearer - 2.0).abs() < 1e-2, "{near} {nearer}");
        // far from the singular point the two rules agree
        let a = g.drift(0.0, &[0.24, 0.0]).unwrap();
        let b = g.drift(0.0, &[0.26, 0.0]).unwrap();
        assert!((a[0] - b[0]).abs() < 0.1 * a[0].abs());
        // several singular points inside one kernel ball
        let fr = build_fractal_drift(1.5, &fractal_radii(2, 1.5, 4).unwrap(), 2).unwrap();
        let gr = mollify(&fr, 4, &MollifyConfig::default()).unwrap();
        for p in fr.singular_set() {
            let v = gr.drift(0.0, &p.x).unwrap();
            assert!(v.iter().all(|c| c.is_finite()));
        }
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    #[test]
    fn select_m_examples() {
        assert_eq!(select_m(100, 0.25, 1.0).unwrap(), 12);
        assert_eq!(select_m(1, 0.01, 10.0).unwrap(), 0);
        let mut prev = 0;
        for n in [1u64, 10, 100, 1000, 10_000] {
            let m = select_m(n, 1.0 / 9.0, 1.0).unwrap();
            assert!(m >= prev);
            prev = m;
        }
        assert!(prev > 100);
    }

    #[test]
    fn truncation_cases() {
        // no D sigma metadata: Gamma_m = R, identity truncation
        let f = constant_field(DMatrix::identity(2, 2) * 2.0, vec![0.0, 0.0]).unwrap();
        let fam = MollifiedFamily::new(&f, 4, 0, &MollifyConfig::default()).unwrap();
        let (g, set) = truncate_sigma(&fam).unwrap();
        assert_eq!(set, GammaSet::All);
        assert!((g.sigma(0.0, &[0.1, 0.2]).unwrap() - DMatrix::identity(2, 2) * 2.0).abs().max() < 1e-12);
        // m = -1: kappa everywhere
        let fam = MollifiedFamily::new(&f, 4, -1, &MollifyConfig::default()).unwrap();
        let (g, set) = truncate_sigma(&fam).unwrap();
        assert_eq!(set, GammaSet::Empty);
        assert_eq!(g.sigma(0.0, &[0.1, 0.2]).unwrap(), DMatrix::identity(2, 2));
        // d1 > d: kappa = [I | 0]
        let k = default_kappa(2, 3);
        assert!((&k * k.transpose() - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        let wide = constant_field(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, 0.0]), vec![0.0; 2]).unwrap();
        let fam = MollifiedFamily::new(&wide, 2, -1, &MollifyConfig::default()).unwrap();
        let (g, _) = truncate_sigma(&fam).unwrap();
        assert_eq!(g.sigma(0.0, &[0.0, 0.0]).unwrap(), k);
    }

    #[test]
    fn threshold_truncation_uses_declared_sup() {
        let f = build_sigma_vmo(0.5, 1.0, 1).unwrap();
        let sup = f.dsigma_bounded_sup().unwrap()(0.0);
        assert!(sup > 0.0 && sup.is_finite());
        let below = MollifiedFamily::new(&f, 8, (sup.floor() as i64 - 1).max(-1), &MollifyConfig::default()).unwrap();
        let (g, _) = truncate_sigma(&below).unwrap();
        if sup > 0.0 && (sup.floor() as i64 - 1) >= 0 {
            assert_eq!(g.sigma(0.0, &[0.01]).unwrap()[(0, 0)], 1.0);
        }
        let above = MollifiedFamily::new(&f, 8, sup.ceil() as i64, &MollifyConfig::default()).unwrap();
        let (g, _) = truncate_sigma(&above).unwrap();
        assert!(g.sigma(0.0, &[0.01]).unwrap()[(0, 0)] > 1.0);
    }

    #[test]
    fn ellipticity_examples() {
        let region = Region { t: (0.0, 1.0), x: vec![(-1.0, 1.0); 2] };
        let r = ellipticity_check(&brownian(2), &region, 100, 1).unwrap();
        assert_eq!((r.min, r.max), (1.0, 1.0));
        let region = Region { t: (0.0, 1.0), x: vec![(-0.5, 0.5); 2] };
        let r = ellipticity_check(&build_sigma_vmo(0.5, 1.0, 2).unwrap(), &region, 2000, 1).unwrap();
        assert!(r.min >= 1.0 && r.max <= 9.0 && r.pass);
    }
}
