use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampler::{check_hits, pole_for, probe_seed, weighted_mean, BallSample};
use super::{Argmax, SamplerSpec};
use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::quadrature::unit_ball_volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLdReport {
    /// `sup lambda^d |B ∩ {|b| > lambda}|` over probed `t`, unit balls and `lambda`.
    pub value: f64,
    pub argmax: Argmax,
    pub argmax_lambda: f64,
    /// Sup over balls and times for each `lambda` in the grid.
    pub per_lambda: Vec<(f64, f64)>,
    /// Binomial hit-counting standard error at each per-lambda sup.
    pub noise_floor: Vec<f64>,
    pub samples: usize,
}

/// Weak-`L_d` criterion by hit counting over unit balls.
pub fn weak_ld_criterion(b: &CoefficientField, lambda_grid: &[f64], sampler: &SamplerSpec) -> Result<WeakLdReport> {
    if lambda_grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::invalid("lambda grid must be positive"));
    }
    sampler.validate(b.dim())?;
    let dim = b.dim();
    let vol = unit_ball_volume(dim);
    let n = sampler.even_points();
    let mut probes = Vec::new();
    for t in sampler.times() {
        for c in sampler.centres(b) {
            probes.push((t, c));
        }
    }
    if probes.is_empty() {
        return Err(Error::invalid("sampler produced no probes"));
    }
    // per probe: (value, noise) for each lambda
    let per_probe: Vec<Vec<(f64, f64)>> = probes
        .par_iter()
        .map(|(t, c)| {
            let sample = BallSample::new(c, 1.0, pole_for(b, c, 1.0), n, probe_seed(sampler.seed, *t, 1.0, c));
            let mut out = vec![0.0; dim];
            let mut hits = 0;
            let norms: Vec<f64> = (0..sample.len())
                .map(|i| match b.drift_into(*t, sample.point(i), &mut out) {
                    Ok(()) => Ok(out.iter().map(|v| v * v).sum::<f64>().sqrt()),
                    Err(Error::Singular { .. } | Error::NonFinite { .. }) => {
                        hits += 1;
                        Ok(f64::INFINITY)
                    }
                    Err(e) => Err(e),
                })
                .collect::<Result<_>>()?;
            check_hits(hits, sample.len())?;
            Ok(lambda_grid
                .iter()
                .map(|&lam| {
                    let ind: Vec<Option<f64>> = norms.iter().map(|v| Some(if *v > lam { 1.0 } else { 0.0 })).collect();
                    let (frac, _) = weighted_mean(&sample, &ind);
                    let scale = lam.powi(dim as i32) * vol;
                    let noise = scale * (frac * (1.0 - frac) / sample.len() as f64).max(0.0).sqrt();
                    (scale * frac, noise)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut per_lambda = Vec::with_capacity(lambda_grid.len());
    let mut noise_floor = Vec::with_capacity(lambda_grid.len());
    let (mut best, mut best_probe, mut best_lambda) = (f64::NEG_INFINITY, 0, lambda_grid[0]);
    for (j, &lam) in lambda_grid.iter().enumerate() {
        let (mut sup, mut noise, mut arg) = (f64::NEG_INFINITY, 0.0, 0);
        for (i, vals) in per_probe.iter().enumerate() {
            if vals[j].0 > sup {
                sup = vals[j].0;
                noise = vals[j].1;
                arg = i;
            }
        }
        per_lambda.push((lam, sup));
        noise_floor.push(noise);
        if sup > best {
            best = sup;
            best_probe = arg;
            best_lambda = lam;
        }
    }
    let (t, c) = &probes[best_probe];
    Ok(WeakLdReport {
        value: best,
        argmax: Argmax { t: *t, x: c.clone(), rho: 1.0 },
        argmax_lambda: best_lambda,
        per_lambda,
        noise_floor,
        samples: probes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{brownian, build_drift_inverse, constant_field, Direction};
    use nalgebra::DMatrix;

    #[test]
    fn zero_and_small_drifts_give_zero() {
        let s = SamplerSpec::default();
        assert_eq!(weak_ld_criterion(&brownian(2), &[0.5, 1.0], &s).unwrap().value, 0.0);
        let f = constant_field(DMatrix::identity(2, 2), vec![0.3, 0.0]).unwrap();
        assert_eq!(weak_ld_criterion(&f, &[0.5, 1.0], &s).unwrap().value, 0.0);
    }

    #[test]
    fn inverse_drift_gives_unit_ball_volume() {
        let f = build_drift_inverse(1.0, 3, Direction::RadialIn).unwrap();
        let grid = [1.0, 1.5, 2.0, 3.0, 4.0];
        let r = weak_ld_criterion(&f, &grid, &SamplerSpec::default()).unwrap();
        let vol = unit_ball_volume(3);
        assert!((r.value - vol).abs() < 0.03 * vol, "{} vs {vol}: {:?} {:?} {:?}", r.value, r.per_lambda, r.argmax, r.noise_floor);
    }

    #[test]
    fn rejects_empty_grid() {
        assert!(weak_ld_criterion(&brownian(1), &[], &SamplerSpec::default()).is_err());
    }
}
