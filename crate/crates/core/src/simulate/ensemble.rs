use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::rng::IncrementStream;

/// `1 / sqrt(dt)`, the usual cap for drifts that blow up at a point.
pub fn default_drift_cap(dt: f64) -> f64 {
    1.0 / dt.sqrt()
}

/// Everything that determines an ensemble. Paths are a pure function of
/// these values, so a spec can be re-simulated instead of stored.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub field: CoefficientField,
    pub t0: f64,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    /// Truncation level for `|b|`; required for fields with singular points.
    pub drift_cap: Option<f64>,
}

impl EnsembleSpec {
    pub fn new(field: CoefficientField, x0: Vec<f64>, horizon: f64, dt: f64, paths: usize, seed: u64) -> Self {
        Self { field, t0: 0.0, x0, horizon, dt, paths, seed, drift_cap: None }
    }

    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    pub fn with_drift_cap(mut self, cap: Option<f64>) -> Self {
        self.drift_cap = cap;
        self
    }

    pub fn with_paths(mut self, paths: usize) -> Self {
        self.paths = paths;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let steps = (self.horizon / self.dt).round();
        if steps < 1.0 || (steps * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::invalid(format!(
                "horizon {} is not a whole number of steps of size {}",
                self.horizon, self.dt
            )));
        }
        Ok(steps as usize)
    }

    pub(crate) fn validate(&self) -> Result<usize> {
        let steps = self.steps()?;
        if self.paths == 0 {
            return Err(Error::invalid("need at least one path"));
        }
        if self.x0.len() != self.field.dim() {
            return Err(Error::invalid("x0 has the wrong dimension"));
        }
        if !self.t0.is_finite() || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial point must be finite"));
        }
        if let Some(cap) = self.drift_cap {
            if !(cap > 0.0) {
                return Err(Error::invalid("drift_cap must be positive"));
            }
        }
        Ok(steps)
    }

    /// Simulates path `index` into the buffers (`(steps+1) x d` states and
    /// `steps x d1` increments).
    pub(crate) fn simulate_into(&self, index: usize, steps: usize, states: &mut [f64], increments: &mut [f64]) -> Result<()> {
        let d = self.field.dim();
        let d1 = self.field.noise_dim();
        let sqrt_dt = self.dt.sqrt();
        let mut stream = IncrementStream::new(self.seed, index as u64, d1);
        let mut sigma = vec![0.0; d * d1];
        let mut drift = vec![0.0; d];
        states[..d].copy_from_slice(&self.x0);
        for k in 0..steps {
            let t = self.t0 + k as f64 * self.dt;
            let (done, rest) = states.split_at_mut((k + 1) * d);
            let x = &done[k * d..];
            let next = &mut rest[..d];
            let dw = &mut increments[k * d1..(k + 1) * d1];
            stream.next_increment(sqrt_dt, dw);
            euler_step(&self.field, self.drift_cap, t, x, dw, self.dt, next, &mut sigma, &mut drift, index, k)?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp { path: index, step: k + 1 });
            }
        }
        Ok(())
    }

    /// Simulates and stores all paths.
    pub fn simulate(&self, keep_increments: bool) -> Result<PathEnsemble> {
        let steps = self.validate()?;
        let d = self.field.dim();
        let d1 = self.field.noise_dim();
        let per_path: Vec<(Vec<f64>, Vec<f64>)> = (0..self.paths)
            .into_par_iter()
            .map(|i| {
                let mut states = vec![0.0; (steps + 1) * d];
                let mut inc = vec![0.0; steps * d1];
                self.simulate_into(i, steps, &mut states, &mut inc)?;
                Ok((states, if keep_increments { inc } else { Vec::new() }))
            })
            .collect::<Result<_>>()?;
        let mut states = Vec::with_capacity(self.paths * (steps + 1) * d);
        let mut increments = Vec::with_capacity(if keep_increments { self.paths * steps * d1 } else { 0 });
        for (s, inc) in per_path {
            states.extend(s);
            increments.extend(inc);
        }
        Ok(PathEnsemble {
            t0: self.t0,
            x0: self.x0.clone(),
            dt: self.dt,
            steps,
            paths: self.paths,
            dim: d,
            noise_dim: d1,
            seed: self.seed,
            states,
            increments: keep_increments.then_some(increments),
            eta: None,
        })
    }
}

/// One Euler-Maruyama step from `x` at time `t`, writing into `next`.
#[allow(clippy::too_many_arguments)]
fn euler_step(
    field: &CoefficientField,
    drift_cap: Option<f64>,
    t: f64,
    x: &[f64],
    dw: &[f64],
    dt: f64,
    next: &mut [f64],
    sigma: &mut [f64],
    drift: &mut [f64],
    index: usize,
    k: usize,
) -> Result<()> {
    let d = x.len();
    let d1 = dw.len();
    match field.sigma_into(t, x, sigma) {
        Ok(()) => {}
        Err(Error::NonFinite { .. }) => return Err(Error::BlowUp { path: index, step: k }),
        Err(e) => return Err(e),
    }
    match field.drift_into(t, x, drift) {
        Ok(()) => {
            if let Some(cap) = drift_cap {
                let norm = drift.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > cap {
                    drift.iter_mut().for_each(|v| *v *= cap / norm);
                }
            }
        }
        Err(Error::NonFinite { .. }) => return Err(Error::BlowUp { path: index, step: k }),
        // a capped drift has no direction at the singular point itself
        Err(Error::Singular { .. }) if drift_cap.is_some() => drift.fill(0.0),
        Err(e) => return Err(e),
    }
    for i in 0..d {
        let mut v = x[i] + drift[i] * dt;
        for j in 0..d1 {
            v += sigma[i * d1 + j] * dw[j];
        }
        next[i] = v;
    }
    Ok(())
}

/// Simulates `spec` and stores paths and increments.
pub fn simulate_paths(spec: &EnsembleSpec) -> Result<PathEnsemble> {
    spec.simulate(true)
}

/// One path of an ensemble.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub index: usize,
    pub t0: f64,
    pub dt: f64,
    pub dim: usize,
    pub noise_dim: usize,
    pub states: &'a [f64],
    /// Empty when the ensemble did not keep increments.
    pub increments: &'a [f64],
    pub eta: Option<&'a [f64]>,
}

impl<'a> PathView<'a> {
    pub fn steps(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn state(&self, k: usize) -> &'a [f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increment(&self, k: usize) -> Result<&'a [f64]> {
        if self.increments.is_empty() {
            return Err(Error::invalid("ensemble does not carry increments"));
        }
        Ok(&self.increments[k * self.noise_dim..(k + 1) * self.noise_dim])
    }

    pub fn eta(&self, k: usize) -> Option<&'a [f64]> {
        self.eta.map(|e| &e[k * self.dim..(k + 1) * self.dim])
    }
}

/// Time grid shared by all paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Step index of time `t`, which must lie on the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = ((t - self.t0) / self.dt).round();
        if k < 0.0 || k > self.steps as f64 || ((t - self.t0) - k * self.dt).abs() > 1e-9 * self.dt.max(t.abs()) {
            return Err(Error::invalid(format!("time {t} is not on the simulation grid")));
        }
        Ok(k as usize)
    }
}

/// Anything that can hand out paths: a stored ensemble or a spec that is
/// re-simulated on demand.
pub trait PathSource: Sync {
    fn path_count(&self) -> usize;
    fn grid(&self) -> TimeGrid;
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn x0(&self) -> &[f64];

    /// Applies `f` to every path in parallel; results are in path order.
    fn map_paths<R, F>(&self, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(PathView<'_>) -> Result<R> + Sync + Send;
}

impl PathSource for EnsembleSpec {
    fn path_count(&self) -> usize {
        self.paths
    }

    fn grid(&self) -> TimeGrid {
        TimeGrid { t0: self.t0, dt: self.dt, steps: self.steps().unwrap_or(0) }
    }

    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn noise_dim(&self) -> usize {
        self.field.noise_dim()
    }

    fn x0(&self) -> &[f64] {
        &self.x0
    }

    fn map_paths<R, F>(&self, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(PathView<'_>) -> Result<R> + Sync + Send,
    {
        let steps = self.validate()?;
        let d = self.field.dim();
        let d1 = self.field.noise_dim();
        (0..self.paths)
            .into_par_iter()
            .map_init(
                || (vec![0.0; (steps + 1) * d], vec![0.0; steps * d1]),
                |(states, inc), i| {
                    self.simulate_into(i, steps, states, inc)?;
                    f(PathView {
                        index: i,
                        t0: self.t0,
                        dt: self.dt,
                        dim: d,
                        noise_dim: d1,
                        states,
                        increments: inc,
                        eta: None,
                    })
                },
            )
            .collect()
    }
}

/// Stored trajectories on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    pub paths: usize,
    pub dim: usize,
    pub noise_dim: usize,
    pub seed: u64,
    /// `paths x (steps+1) x dim`
    pub states: Vec<f64>,
    /// `paths x steps x noise_dim`
    pub increments: Option<Vec<f64>>,
    /// Derivative-flow trajectories, `paths x (steps+1) x dim`.
    pub eta: Option<Vec<f64>>,
}

impl PathEnsemble {
    /// Path `i`; stream ids equal path indices.
    pub fn path(&self, i: usize) -> PathView<'_> {
        let s = (self.steps + 1) * self.dim;
        let w = self.steps * self.noise_dim;
        PathView {
            index: i,
            t0: self.t0,
            dt: self.dt,
            dim: self.dim,
            noise_dim: self.noise_dim,
            states: &self.states[i * s..(i + 1) * s],
            increments: self.increments.as_ref().map_or(&[][..], |inc| &inc[i * w..(i + 1) * w]),
            eta: self.eta.as_ref().map(|e| &e[i * s..(i + 1) * s]),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Re-runs the scheme on every second grid point, driven by pairwise
    /// sums of the stored increments. Used as a time-discretization proxy.
    pub fn coarsened(&self, field: &CoefficientField, drift_cap: Option<f64>) -> Result<PathEnsemble> {
        let inc = self.increments.as_ref().ok_or_else(|| Error::invalid("ensemble does not carry increments"))?;
        if self.steps % 2 != 0 {
            return Err(Error::invalid("coarsening needs an even step count"));
        }
        if field.dim() != self.dim || field.noise_dim() != self.noise_dim {
            return Err(Error::invalid("field does not match the ensemble"));
        }
        let steps = self.steps / 2;
        let (d, d1) = (self.dim, self.noise_dim);
        let dt = 2.0 * self.dt;
        let per_path: Vec<(Vec<f64>, Vec<f64>)> = (0..self.paths)
            .into_par_iter()
            .map(|i| {
                let fine = &inc[i * self.steps * d1..(i + 1) * self.steps * d1];
                let mut states = vec![0.0; (steps + 1) * d];
                let mut dws = vec![0.0; steps * d1];
                let mut sigma = vec![0.0; d * d1];
                let mut drift = vec![0.0; d];
                states[..d].copy_from_slice(&self.x0);
                for k in 0..steps {
                    for j in 0..d1 {
                        dws[k * d1 + j] = fine[2 * k * d1 + j] + fine[(2 * k + 1) * d1 + j];
                    }
                    let (done, rest) = states.split_at_mut((k + 1) * d);
                    let t = self.t0 + k as f64 * dt;
                    euler_step(field, drift_cap, t, &done[k * d..], &dws[k * d1..(k + 1) * d1], dt, &mut rest[..d], &mut sigma, &mut drift, i, k)?;
                    if rest[..d].iter().any(|v| !v.is_finite()) {
                        return Err(Error::BlowUp { path: i, step: k + 1 });
                    }
                }
                Ok((states, dws))
            })
            .collect::<Result<_>>()?;
        let mut states = Vec::with_capacity(self.paths * (steps + 1) * d);
        let mut increments = Vec::with_capacity(self.paths * steps * d1);
        for (s, w) in per_path {
            states.extend(s);
            increments.extend(w);
        }
        Ok(PathEnsemble { dt, steps, states, increments: Some(increments), eta: None, x0: self.x0.clone(), ..*self })
    }

    /// Values of all paths at step `k`, `paths x dim`.
    pub fn states_at(&self, k: usize) -> Vec<f64> {
        (0..self.paths).flat_map(|i| self.path(i).state(k).to_vec()).collect()
    }
}

impl PathSource for PathEnsemble {
    fn path_count(&self) -> usize {
        self.paths
    }

    fn grid(&self) -> TimeGrid {
        TimeGrid { t0: self.t0, dt: self.dt, steps: self.steps }
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn x0(&self) -> &[f64] {
        &self.x0
    }

    fn map_paths<R, F>(&self, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(PathView<'_>) -> Result<R> + Sync + Send,
    {
        (0..self.paths).into_par_iter().map(|i| f(self.path(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{brownian, build_drift_inverse, constant_field, ornstein_uhlenbeck, Direction};
    use crate::stats::mean_and_std_error;
    use nalgebra::DMatrix;

    #[test]
    fn brownian_moments() {
        let spec = EnsembleSpec::new(brownian(2), vec![0.5, -1.0], 1.0, 0.05, 20_000, 11);
        let ens = simulate_paths(&spec).unwrap();
        let end = ens.states_at(ens.steps);
        for i in 0..2 {
            let xs: Vec<f64> = end.chunks(2).map(|p| p[i]).collect();
            let (m, _) = mean_and_std_error(&xs);
            assert!((m - spec.x0[i]).abs() < 4.0 * (2.0f64 / 20_000.0).sqrt());
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!((var - 1.0).abs() < 0.1);
        }
        for i in 0..ens.paths {
            assert_eq!(ens.path(i).state(0), &spec.x0[..]);
        }
    }

    #[test]
    fn constant_drift_mean() {
        let f = constant_field(DMatrix::identity(1, 1), vec![0.7]).unwrap();
        let spec = EnsembleSpec::new(f, vec![0.0], 2.0, 0.1, 10_000, 3);
        let ens = simulate_paths(&spec).unwrap();
        let xs = ens.states_at(ens.steps);
        let (m, se) = mean_and_std_error(&xs);
        assert!((m - 1.4).abs() < 4.0 * se);
    }

    #[test]
    fn ou_variance() {
        let spec = EnsembleSpec::new(ornstein_uhlenbeck(1, 1.0), vec![0.0], 1.0, 1e-3, 4000, 5);
        let ens = simulate_paths(&spec).unwrap();
        let xs = ens.states_at(ens.steps);
        let n = xs.len() as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n;
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        // variance of the sample second moment of a centred normal is 2 s^4 / n
        let se = (2.0 / n).sqrt() * exact;
        assert!((var - exact).abs() < 3.0 * se, "{var} vs {exact}");
    }

    #[test]
    fn reproducible_and_streamed_paths_agree() {
        let spec = EnsembleSpec::new(ornstein_uhlenbeck(2, 0.5), vec![0.1, 0.2], 0.5, 0.01, 50, 9);
        let a = simulate_paths(&spec).unwrap();
        let b = simulate_paths(&spec).unwrap();
        assert_eq!(a, b);
        let streamed = spec.map_paths(|p| Ok(p.states.to_vec())).unwrap();
        for (i, s) in streamed.iter().enumerate() {
            assert_eq!(&s[..], a.path(i).states);
        }
    }

    #[test]
    fn increments_are_centred() {
        let spec = EnsembleSpec::new(brownian(2), vec![0.0, 0.0], 1.0, 0.01, 500, 1);
        let ens = simulate_paths(&spec).unwrap();
        let inc = ens.increments.as_ref().unwrap();
        let n = (ens.paths * ens.steps) as f64;
        for j in 0..2 {
            let mean = inc.iter().skip(j).step_by(2).sum::<f64>() / n;
            // increments have variance dt
            assert!(mean.abs() < 5.0 * (0.01 / n).sqrt());
        }
    }

    #[test]
    fn singular_drift_requires_cap() {
        let f = build_drift_inverse(1.0, 2, Direction::RadialIn).unwrap();
        let spec = EnsembleSpec::new(f, vec![0.0, 0.0], 0.1, 0.01, 4, 1);
        assert!(matches!(simulate_paths(&spec), Err(Error::Singular { .. })));
        let capped = spec.with_drift_cap(Some(default_drift_cap(0.01)));
        assert!(simulate_paths(&capped).is_ok());
    }

    #[test]
    fn blow_up_is_reported() {
        let f = ornstein_uhlenbeck(1, -1e200);
        let spec = EnsembleSpec::new(f, vec![1.0], 1.0, 0.5, 2, 1);
        assert!(matches!(simulate_paths(&spec), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn rejects_fractional_step_count() {
        let spec = EnsembleSpec::new(brownian(1), vec![0.0], 1.0, 0.3, 2, 1);
        assert!(simulate_paths(&spec).is_err());
    }
}
