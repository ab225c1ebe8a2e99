use serde::{Deserialize, Serialize};

use super::ensemble::PathSource;
use crate::error::{Error, Result};
use crate::quadrature::tensor_indices;
use crate::stats::{linear_fit, FunctionalEstimate};

/// Nonnegative test function `f(t, x)`.
pub type SpaceTimeFn<'a> = dyn Fn(f64, &[f64]) -> f64 + Sync + 'a;

/// `E (int_0^T f(t0 + s, x_s) ds)^m`, trapezoid rule on the step grid.
pub fn occupation_functional<S: PathSource>(src: &S, f: &SpaceTimeFn<'_>, m: u32) -> Result<FunctionalEstimate> {
    if m == 0 {
        return Err(Error::invalid("moment order must be at least 1"));
    }
    let samples = src.map_paths(|p| {
        let steps = p.steps();
        let mut acc = 0.0;
        let mut prev = f(p.time(0), p.state(0));
        for k in 1..=steps {
            let cur = f(p.time(k), p.state(k));
            acc += 0.5 * (prev + cur) * p.dt;
            prev = cur;
        }
        Ok(acc.powi(m as i32))
    })?;
    Ok(FunctionalEstimate::from_samples(&samples, m))
}

/// Mixed norm `(int (int |f(t, x)|^p dx)^{q/p} dt)^{1/q}` over a box by the
/// midpoint rule.
pub fn lpq_norm(
    f: &SpaceTimeFn<'_>,
    p: f64,
    q: f64,
    time: (f64, f64),
    space: &[(f64, f64)],
    time_cells: usize,
    space_cells: usize,
) -> Result<f64> {
    if !(p >= 1.0 && q >= 1.0) {
        return Err(Error::invalid("mixed norm exponents must be at least 1"));
    }
    if time_cells == 0 || space_cells == 0 || space.is_empty() {
        return Err(Error::invalid("mixed norm needs a nonempty grid"));
    }
    let ht = (time.1 - time.0) / time_cells as f64;
    let hx: Vec<f64> = space.iter().map(|(lo, hi)| (hi - lo) / space_cells as f64).collect();
    let cell: f64 = hx.iter().product();
    let mut x = vec![0.0; space.len()];
    let mut total = 0.0;
    for i in 0..time_cells {
        let t = time.0 + (i as f64 + 0.5) * ht;
        let mut inner = 0.0;
        for idx in tensor_indices(space_cells, space.len()) {
            for (a, &j) in idx.iter().enumerate() {
                x[a] = space[a].0 + (j as f64 + 0.5) * hx[a];
            }
            inner += f(t, &x).abs().powf(p);
        }
        total += (inner * cell).powf(q / p) * ht;
    }
    Ok(total.powf(1.0 / q))
}

/// Parabolic cylinder `[t, t + rho^2) x B_rho(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub t: f64,
    pub x: Vec<f64>,
    pub rho: f64,
}

impl Cylinder {
    pub fn contains(&self, t: f64, x: &[f64]) -> bool {
        let r2: f64 = x.iter().zip(&self.x).map(|(a, b)| (a - b).powi(2)).sum();
        t >= self.t && t < self.t + self.rho * self.rho && r2 < self.rho * self.rho
    }
}

/// `E int_0^{tau_C} g(t0 + s, x_s) ds` with `tau_C` the first grid time at
/// which `(t0 + s, x_s)` is outside the cylinder.
pub fn exit_time_functional<S: PathSource>(src: &S, cyl: &Cylinder, g: &SpaceTimeFn<'_>) -> Result<FunctionalEstimate> {
    let grid = src.grid();
    if !cyl.contains(grid.t0, src.x0()) {
        return Err(Error::invalid("cylinder must contain the starting point"));
    }
    let t_end = cyl.t + cyl.rho * cyl.rho;
    if grid.t0 + grid.horizon() < t_end - 1e-12 {
        return Err(Error::invalid("simulation horizon ends before the cylinder does"));
    }
    let samples = src.map_paths(|p| {
        let mut acc = 0.0;
        let mut prev = g(p.time(0), p.state(0));
        for k in 1..=p.steps() {
            let t = p.time(k);
            let cur = g(t, p.state(k));
            acc += 0.5 * (prev + cur) * p.dt;
            prev = cur;
            if !cyl.contains(t, p.state(k)) {
                break;
            }
        }
        Ok(acc)
    })?;
    Ok(FunctionalEstimate::from_samples(&samples, 1))
}

/// Estimates of `E sup_{u in [t0, t0+h]} |x_u - x_{t0}|^n` per window and the
/// log-log slope over windows `h <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    pub n: u32,
    /// Window lengths actually used (whole numbers of steps).
    pub windows: Vec<f64>,
    pub estimates: Vec<FunctionalEstimate>,
    pub slope: f64,
    pub intercept: f64,
}

pub fn modulus_statistics<S: PathSource>(src: &S, n: u32, windows: &[f64]) -> Result<ModulusReport> {
    let grid = src.grid();
    if n == 0 || windows.is_empty() {
        return Err(Error::invalid("need a positive moment and at least one window"));
    }
    let mut window_steps = Vec::with_capacity(windows.len());
    for &h in windows {
        let k = (h / grid.dt).round();
        if !(h > 0.0) || k < 1.0 || k as usize > grid.steps {
            return Err(Error::invalid(format!("window {h} does not fit the simulation grid")));
        }
        window_steps.push(k as usize);
    }
    let per_path: Vec<Vec<f64>> = src.map_paths(|p| {
        let x0 = p.state(0);
        let mut running = 0.0f64;
        let mut out = Vec::with_capacity(window_steps.len());
        let mut order: Vec<usize> = (0..window_steps.len()).collect();
        order.sort_by_key(|&i| window_steps[i]);
        let mut res = vec![0.0; window_steps.len()];
        let mut k = 0;
        for &i in &order {
            while k < window_steps[i] {
                k += 1;
                let r2: f64 = p.state(k).iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum();
                running = running.max(r2);
            }
            res[i] = running.sqrt().powi(n as i32);
        }
        out.extend(res);
        Ok(out)
    })?;
    let mut estimates = Vec::with_capacity(windows.len());
    for i in 0..windows.len() {
        let col: Vec<f64> = per_path.iter().map(|r| r[i]).collect();
        estimates.push(FunctionalEstimate::from_samples(&col, n));
    }
    let used: Vec<f64> = window_steps.iter().map(|&k| k as f64 * grid.dt).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = used
        .iter()
        .zip(&estimates)
        .filter(|(h, e)| **h <= 1.0 + 1e-12 && e.value > 0.0)
        .map(|(h, e)| (h.ln(), e.value.ln()))
        .unzip();
    let (slope, intercept) = if xs.len() >= 2 { linear_fit(&xs, &ys) } else { (f64::NAN, f64::NAN) };
    Ok(ModulusReport { n, windows: used, estimates, slope, intercept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{brownian, constant_field};
    use crate::simulate::EnsembleSpec;
    use nalgebra::DMatrix;

    #[test]
    fn zero_function_gives_zero() {
        let spec = EnsembleSpec::new(brownian(2), vec![0.0, 0.0], 0.5, 0.01, 100, 1);
        let e = occupation_functional(&spec, &|_, _| 0.0, 1).unwrap();
        assert_eq!((e.value, e.std_error), (0.0, 0.0));
    }

    #[test]
    fn constant_function_gives_horizon() {
        let spec = EnsembleSpec::new(brownian(1), vec![0.0], 0.5, 0.01, 10, 1);
        let e = occupation_functional(&spec, &|_, _| 2.0, 3).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exit_time_is_capped() {
        let spec = EnsembleSpec::new(brownian(2), vec![0.0, 0.0], 0.25, 0.001, 2000, 4);
        let cyl = Cylinder { t: 0.0, x: vec![0.0, 0.0], rho: 0.5 };
        let e = exit_time_functional(&spec, &cyl, &|_, _| 1.0).unwrap();
        assert!(e.value > 0.0 && e.value <= 0.25 + 1e-12);
        let outside = Cylinder { t: 0.0, x: vec![2.0, 0.0], rho: 0.5 };
        assert!(exit_time_functional(&spec, &outside, &|_, _| 1.0).is_err());
    }

    #[test]
    fn deterministic_motion_modulus() {
        let f = constant_field(DMatrix::zeros(1, 1), vec![3.0]).unwrap();
        let spec = EnsembleSpec::new(f, vec![0.0], 1.0, 1.0 / 64.0, 3, 1);
        let windows = [1.0 / 16.0, 0.125, 0.25, 0.5, 1.0];
        let r = modulus_statistics(&spec, 2, &windows).unwrap();
        for (h, e) in r.windows.iter().zip(&r.estimates) {
            assert!((e.value - (3.0 * h).powi(2)).abs() < 1e-10);
        }
        assert!((r.slope - 2.0).abs() < 1e-10);
    }

    #[test]
    fn lpq_norm_of_indicator() {
        // |B_1| in 2d is pi; ||1_{[0,1] x B_1}||_{p,q} = pi^{1/p}
        let f = |t: f64, x: &[f64]| if t < 1.0 && x[0] * x[0] + x[1] * x[1] < 1.0 { 1.0 } else { 0.0 };
        let v = lpq_norm(&f, 4.0, 4.0, (0.0, 1.0), &[(-1.0, 1.0), (-1.0, 1.0)], 4, 400).unwrap();
        assert!((v - std::f64::consts::PI.powf(0.25)).abs() < 1e-3);
    }
}
