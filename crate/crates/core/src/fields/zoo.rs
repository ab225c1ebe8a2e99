//! Analytic example fields.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{identity_sigma, norm, zero_vector, CoefficientField, MatrixFn, SingularPoint, VectorFn};
use crate::error::{Error, Result};

/// Direction of a drift whose magnitude is prescribed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `-x / |x|`
    #[default]
    RadialIn,
    /// `x / |x|`
    RadialOut,
    /// A fixed unit vector.
    FixedUnitVector(Vec<f64>),
}

impl Direction {
    fn validate(&self, dim: usize) -> Result<()> {
        if let Direction::FixedUnitVector(u) = self {
            if u.len() != dim {
                return Err(Error::invalid("direction vector has the wrong dimension"));
            }
            if (norm(u) - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("direction vector must have unit length"));
            }
        }
        Ok(())
    }

    /// Writes `magnitude * direction(y)` where `y` is the offset from the
    /// singular centre (`|y| > 0`).
    fn apply(&self, y: &[f64], r: f64, magnitude: f64, out: &mut [f64]) {
        match self {
            Direction::RadialIn => out.iter_mut().zip(y).for_each(|(o, yi)| *o = -magnitude * yi / r),
            Direction::RadialOut => out.iter_mut().zip(y).for_each(|(o, yi)| *o = magnitude * yi / r),
            Direction::FixedUnitVector(u) => out.iter_mut().zip(u).for_each(|(o, ui)| *o = magnitude * ui),
        }
    }
}

/// Standard C-infinity bump `exp(1 - 1/(1 - s^2))` on `|s| < 1`, equal to 1 at 0.
pub fn smooth_bump(s: f64) -> f64 {
    let s2 = s * s;
    if s2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s2)).exp()
    }
}

fn smooth_bump_derivative(s: f64) -> f64 {
    let s2 = s * s;
    if s2 >= 1.0 {
        0.0
    } else {
        smooth_bump(s) * (-2.0 * s / (1.0 - s2).powi(2))
    }
}

/// Standard Brownian motion: `sigma = I_d`, `b = 0`.
pub fn brownian(dim: usize) -> CoefficientField {
    CoefficientField::new("brownian", dim, dim, identity_sigma(dim, dim), zero_vector())
        .expect("valid dimension")
        .with_time_independent(true)
}

/// Constant coefficients. `delta` is taken from the spectrum of `sigma sigma^*`
/// when it is nondegenerate and left at 1 otherwise.
pub fn constant_field(sigma: DMatrix<f64>, drift: Vec<f64>) -> Result<CoefficientField> {
    let dim = sigma.nrows();
    let noise_dim = sigma.ncols();
    if drift.len() != dim {
        return Err(Error::invalid("drift length must equal the number of rows of sigma"));
    }
    let mut row_major = Vec::with_capacity(dim * noise_dim);
    for i in 0..dim {
        for k in 0..noise_dim {
            row_major.push(sigma[(i, k)]);
        }
    }
    let a = &sigma * sigma.transpose();
    let eig = a.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let delta = if lo > 0.0 { lo.min(1.0 / hi).min(1.0) } else { 1.0 };
    let sigma_fn: Arc<MatrixFn> = Arc::new(move |_t, _x, out: &mut [f64]| {
        out.copy_from_slice(&row_major);
        Ok(())
    });
    let drift_fn: Arc<VectorFn> = Arc::new(move |_t, _x, out: &mut [f64]| {
        out.copy_from_slice(&drift);
        Ok(())
    });
    Ok(CoefficientField::new("constant", dim, noise_dim, sigma_fn, drift_fn)?
        .with_delta(delta)
        .with_time_independent(true))
}

/// `sigma = I`, `b(x) = -rate * x`.
pub fn ornstein_uhlenbeck(dim: usize, rate: f64) -> CoefficientField {
    let drift: Arc<VectorFn> = Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
        out.iter_mut().zip(x).for_each(|(o, xi)| *o = -rate * xi);
        Ok(())
    });
    CoefficientField::new("ornstein-uhlenbeck", dim, dim, identity_sigma(dim, dim), drift)
        .expect("valid dimension")
        .with_time_independent(true)
}

/// Scalar profile `g(x) = amplitude * bump(|x| / R) * sin(ln|ln|x||)` for
/// `0 < |x| < R`, zero elsewhere (including `x = 0`).
fn vmo_profile(r: f64, zeta_radius: f64, amplitude: f64) -> f64 {
    if r == 0.0 || r >= zeta_radius {
        return 0.0;
    }
    amplitude * smooth_bump(r / zeta_radius) * r.ln().abs().ln().sin()
}

fn vmo_profile_derivative(r: f64, zeta_radius: f64, amplitude: f64) -> f64 {
    if r == 0.0 || r >= zeta_radius {
        return 0.0;
    }
    let lnr = r.ln();
    let phase = lnr.abs().ln();
    amplitude
        * (smooth_bump_derivative(r / zeta_radius) / zeta_radius * phase.sin()
            + smooth_bump(r / zeta_radius) * phase.cos() / (r * lnr))
}

/// `sigma(t, x) = 2 I + 1{x != 0} zeta(x) sin(ln|ln|x||)` with
/// `zeta(x) = amplitude * bump(|x| / zeta_radius) * I`.
///
/// The gradient of `sigma` is declared split at `|x| = zeta_radius / 8`: the
/// part inside is the Morrey part, the bounded part's sup is recorded as a
/// constant function of time.
pub fn build_sigma_vmo(zeta_radius: f64, amplitude: f64, dim: usize) -> Result<CoefficientField> {
    if !(0.0..=1.0).contains(&amplitude) {
        return Err(Error::invalid("amplitude must lie in [0, 1]"));
    }
    if !(zeta_radius > 0.0 && zeta_radius <= 0.5) {
        return Err(Error::invalid("zeta_radius must lie in (0, 1/2]"));
    }
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let sigma: Arc<MatrixFn> = Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
        let g = 2.0 + vmo_profile(norm(x), zeta_radius, amplitude);
        out.fill(0.0);
        for i in 0..dim {
            out[i * dim + i] = g;
        }
        Ok(())
    });
    let split_radius = zeta_radius / 8.0;
    let samples = 20_000;
    let bounded_sup = (0..=samples)
        .map(|k| {
            let r = split_radius + (zeta_radius - split_radius) * k as f64 / samples as f64;
            vmo_profile_derivative(r, zeta_radius, amplitude).abs()
        })
        .fold(0.0, f64::max)
        * (dim as f64).sqrt();
    let delta = (2.0 - amplitude).powi(2).min((2.0 + amplitude).powi(-2));
    Ok(
        CoefficientField::new("sigma-vmo", dim, dim, sigma, zero_vector())?
            .with_delta(delta)
            .with_time_independent(true)
            .with_dsigma_bounded_sup(Some(Arc::new(move |_t| bounded_sup))),
    )
}

/// `|b| = gamma / |x|` on `0 < |x| < 1`, zero for `|x| >= 1`, undefined at 0.
pub fn build_drift_inverse(gamma: f64, dim: usize, direction: Direction) -> Result<CoefficientField> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma must be nonnegative"));
    }
    direction.validate(dim)?;
    if gamma == 0.0 {
        return Ok(brownian(dim).with_name("inverse").with_drift_support(Some(vec![(0.0, 0.0); dim])));
    }
    let drift: Arc<VectorFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::Singular { t, x: x.to_vec() });
        }
        if r >= 1.0 {
            out.fill(0.0);
        } else {
            direction.apply(x, r, gamma / r, out);
        }
        Ok(())
    });
    Ok(CoefficientField::new("inverse", dim, dim, identity_sigma(dim, dim), drift)?
        .with_time_independent(true)
        .with_singular_point(SingularPoint { t: None, x: vec![0.0; dim] })
        .with_drift_support(Some(vec![(-1.0, 1.0); dim])))
}

/// `|b| = gamma (|x| + sqrt|t|)^{-1}` on `|x| < 1, |t| < 1`, zero outside,
/// undefined at the origin of space-time.
pub fn build_drift_parabolic(gamma: f64, dim: usize, direction: Direction) -> Result<CoefficientField> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma must be nonnegative"));
    }
    direction.validate(dim)?;
    let drift: Arc<VectorFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        let r = norm(x);
        if r == 0.0 && t == 0.0 {
            return Err(Error::Singular { t, x: x.to_vec() });
        }
        if r >= 1.0 || t.abs() >= 1.0 || gamma == 0.0 {
            out.fill(0.0);
            return Ok(());
        }
        let magnitude = gamma / (r + t.abs().sqrt());
        if r == 0.0 {
            // on the axis the radial directions are undefined; use the first axis
            match &direction {
                Direction::FixedUnitVector(u) => out.iter_mut().zip(u).for_each(|(o, ui)| *o = magnitude * ui),
                Direction::RadialIn | Direction::RadialOut => {
                    out.fill(0.0);
                    out[0] = if direction == Direction::RadialIn { -magnitude } else { magnitude };
                }
            }
        } else {
            direction.apply(x, r, magnitude, out);
        }
        Ok(())
    });
    let mut field = CoefficientField::new("parabolic", dim, dim, identity_sigma(dim, dim), drift)?
        .with_drift_support(Some(vec![(-1.0, 1.0); dim]));
    if gamma > 0.0 {
        field = field.with_singular_point(SingularPoint { t: Some(0.0), x: vec![0.0; dim] });
    }
    Ok(field)
}

/// Radii `r_n` with `rho_n = r_n^{d-p}` proportional to `1 / ((n+1) ln^2(n+1))`
/// and normalized so that the `n_max` terms sum to 1/2. With this choice the
/// partial sums of `r_n^{d-q}` diverge for every `q > p`.
pub fn fractal_radii(dim: usize, p: f64, n_max: usize) -> Result<Vec<f64>> {
    let codim = dim as f64 - p;
    if !(codim > 0.0 && codim <= 1.0) {
        return Err(Error::invalid("p must lie in [d-1, d)"));
    }
    let raw: Vec<f64> = (1..=n_max)
        .map(|n| {
            let m = (n + 1) as f64;
            1.0 / (m * m.ln().powi(2))
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw
        .into_iter()
        .map(|w| (0.5 * w / total).powf(1.0 / codim))
        .collect())
}

/// Superposition `b = sum_n r_n^{-1} b0(r_n^{-1}(x - c_n e_1))` with
/// `b0(x) = |x|^{-1} 1{|x| < 1}` pointing toward each centre.
pub fn build_fractal_drift(p: f64, radii: &[f64], dim: usize) -> Result<CoefficientField> {
    let codim = dim as f64 - p;
    if !(codim > 0.0 && codim <= 1.0) {
        return Err(Error::invalid("p must lie in [d-1, d)"));
    }
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::invalid("radii must be a nonempty positive sequence"));
    }
    let rho_sum: f64 = radii.iter().map(|r| r.powf(codim)).sum();
    if (rho_sum - 0.5).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "radii violate the normalization: sum r_n^(d-p) = {rho_sum}, expected 1/2"
        )));
    }
    let mut centres = Vec::with_capacity(radii.len());
    let mut x_prev = 1.0;
    let mut acc = 0.0;
    for r in radii {
        acc += r.powf(codim);
        let x_n = 1.0 - 2.0 * acc;
        centres.push(0.5 * (x_n + x_prev));
        x_prev = x_n;
    }
    for i in 0..radii.len() {
        for j in i + 1..radii.len() {
            if (centres[i] - centres[j]).abs() < radii[i] + radii[j] {
                return Err(Error::invalid(format!("supports of terms {} and {} overlap", i + 1, j + 1)));
            }
        }
    }
    let cs = centres.clone();
    let rs = radii.to_vec();
    let drift: Arc<VectorFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for (c, r) in cs.iter().zip(&rs) {
            let dx0 = x[0] - c;
            let dist2 = dx0 * dx0 + x[1..].iter().map(|v| v * v).sum::<f64>();
            if dist2 < r * r {
                let dist = dist2.sqrt();
                if dist == 0.0 {
                    return Err(Error::Singular { t, x: x.to_vec() });
                }
                let mag = 1.0 / dist;
                out[0] = -mag * dx0 / dist;
                for k in 1..x.len() {
                    out[k] = -mag * x[k] / dist;
                }
                // disjoint supports: at most one term is active
                break;
            }
        }
        Ok(())
    });
    let singular = centres
        .iter()
        .map(|c| {
            let mut x = vec![0.0; dim];
            x[0] = *c;
            SingularPoint { t: None, x }
        })
        .collect();
    let mut support = vec![(-1.0, 1.0); dim];
    support[0] = (0.0, 1.0);
    Ok(CoefficientField::new("fractal", dim, dim, identity_sigma(dim, dim), drift)?
        .with_time_independent(true)
        .with_singular_set(singular)
        .with_drift_support(Some(support)))
}

/// The full drift `-(d/2) x / |x|^2` of the equation with no solution from 0.
pub fn build_counterexample_drift(dim: usize) -> Result<CoefficientField> {
    if dim < 2 {
        return Err(Error::invalid("the counterexample needs d >= 2"));
    }
    let half_d = dim as f64 / 2.0;
    let drift: Arc<VectorFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 == 0.0 {
            return Err(Error::Singular { t, x: x.to_vec() });
        }
        out.iter_mut().zip(x).for_each(|(o, xi)| *o = -half_d * xi / r2);
        Ok(())
    });
    Ok(CoefficientField::new("counterexample", dim, dim, identity_sigma(dim, dim), drift)?
        .with_time_independent(true)
        .with_singular_point(SingularPoint { t: None, x: vec![0.0; dim] }))
}

/// Smooth compactly supported drift
/// `b(t, x) = amplitude (1 + t^2) bump(|x| / radius) e_1`.
pub fn smooth_bump_drift(amplitude: f64, radius: f64, dim: usize) -> Result<CoefficientField> {
    if !(radius > 0.0) {
        return Err(Error::invalid("bump radius must be positive"));
    }
    let drift: Arc<VectorFn> = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        out[0] = amplitude * (1.0 + t * t) * smooth_bump(norm(x) / radius);
        Ok(())
    });
    Ok(CoefficientField::new("bump", dim, dim, identity_sigma(dim, dim), drift)?
        .with_drift_support(Some(vec![(-radius, radius); dim])))
}
