use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ensemble::{PathSource, PathView};
use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::spaces::TimeProfile;
use crate::stats::{isotonic_nonincreasing, FunctionalEstimate};

/// Per-path Girsanov data for one cutoff level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovWeights {
    pub n_threshold: f64,
    /// `psi_{n,T}`
    pub psi_terminal: Vec<f64>,
    /// `exp psi_{n,T}`
    pub weight: Vec<f64>,
    /// `sup_{s <= T} |exp psi_{n,s} - 1|`
    pub sup_deviation: Vec<f64>,
}

impl GirsanovWeights {
    pub fn mean_weight(&self) -> FunctionalEstimate {
        FunctionalEstimate::from_samples(&self.weight, 1)
    }
}

/// Discretized `psi_{n,s}` along one path, `s` on the step grid:
/// `psi += -gamma . dw - |gamma|^2 dt / 2` with
/// `gamma = 1{|b_B| > n} sigma^* (sigma sigma^*)^{-1} b_B`.
pub fn psi_path(view: &PathView<'_>, sigma_field: &CoefficientField, b_b: &CoefficientField, n_threshold: f64) -> Result<Vec<f64>> {
    let d = view.dim;
    let d1 = view.noise_dim;
    let mut psi = Vec::with_capacity(view.steps() + 1);
    psi.push(0.0);
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d1];
    let mut acc = 0.0;
    for k in 0..view.steps() {
        let t = view.time(k);
        let x = view.state(k);
        b_b.drift_into(t, x, &mut b)?;
        let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > n_threshold {
            sigma_field.sigma_into(t, x, &mut s)?;
            let sig = DMatrix::from_row_slice(d, d1, &s);
            let a = &sig * sig.transpose();
            let sol = a
                .cholesky()
                .map(|c| c.solve(&DVector::from_column_slice(&b)))
                .ok_or(Error::SigmaInversion { path: view.index, step: k })?;
            let gamma = sig.transpose() * sol;
            let dw = view.increment(k)?;
            let dot: f64 = gamma.iter().zip(dw).map(|(g, w)| g * w).sum();
            acc += -dot - 0.5 * gamma.norm_squared() * view.dt;
        }
        psi.push(acc);
    }
    Ok(psi)
}

/// Girsanov weights for an ensemble simulated with the `b_M`-only drift.
/// `sigma_field` supplies `sigma`; `b_b` supplies the bounded drift part.
pub fn girsanov_weights<S: PathSource>(
    src: &S,
    sigma_field: &CoefficientField,
    b_b: &CoefficientField,
    n_threshold: f64,
) -> Result<GirsanovWeights> {
    if !(n_threshold >= 0.0) {
        return Err(Error::invalid("cutoff level must be nonnegative"));
    }
    if b_b.dim() != src.dim() || sigma_field.noise_dim() != src.noise_dim() {
        return Err(Error::invalid("fields do not match the ensemble dimensions"));
    }
    let per_path = src.map_paths(|p| {
        let psi = psi_path(&p, sigma_field, b_b, n_threshold)?;
        let sup = psi.iter().map(|v| (v.exp() - 1.0).abs()).fold(0.0, f64::max);
        let last = *psi.last().expect("nonempty");
        Ok((last, sup))
    })?;
    Ok(GirsanovWeights {
        n_threshold,
        psi_terminal: per_path.iter().map(|r| r.0).collect(),
        weight: per_path.iter().map(|r| r.0.exp()).collect(),
        sup_deviation: per_path.iter().map(|r| r.1).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConvergence {
    pub thresholds: Vec<f64>,
    /// `E sup_s |exp psi_{n,s} - 1|` per threshold.
    pub estimates: Vec<FunctionalEstimate>,
    /// `N (int b~_{B,n}^2)^{1/2} exp(N int b~_B^2)` when a profile was given.
    pub bounds: Option<Vec<f64>>,
    /// Largest violation of monotonicity after isotonic regression, in
    /// standard errors.
    pub monotone_violation: f64,
    pub monotone: bool,
}

/// Left side of the weight convergence estimate over increasing cutoffs,
/// optionally with the right side from the `b~_B` profile and constant `N`.
pub fn weight_convergence_check<S: PathSource>(
    src: &S,
    sigma_field: &CoefficientField,
    b_b: &CoefficientField,
    thresholds: &[f64],
    b_tilde: Option<(&TimeProfile, f64)>,
) -> Result<WeightConvergence> {
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("thresholds must be a nonempty nondecreasing list"));
    }
    let mut estimates = Vec::with_capacity(thresholds.len());
    for &n in thresholds {
        let w = girsanov_weights(src, sigma_field, b_b, n)?;
        estimates.push(FunctionalEstimate::from_samples(&w.sup_deviation, 1));
    }
    let bounds = b_tilde.map(|(profile, big_n)| {
        let total = profile.square_integral();
        thresholds
            .iter()
            .map(|&n| {
                let tail: f64 = profile
                    .values
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v > n)
                    .map(|(i, v)| v * v * (profile.edges[i + 1] - profile.edges[i]))
                    .sum();
                big_n * tail.sqrt() * (big_n * total).exp()
            })
            .collect()
    });
    let values: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let fitted = isotonic_nonincreasing(&values);
    let monotone_violation = values
        .iter()
        .zip(&fitted)
        .zip(&estimates)
        .map(|((v, f), e)| {
            let gap = (v - f).abs();
            if gap == 0.0 {
                0.0
            } else if e.std_error > 0.0 {
                gap / e.std_error
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    Ok(WeightConvergence {
        thresholds: thresholds.to_vec(),
        estimates,
        bounds,
        monotone_violation,
        monotone: monotone_violation <= 3.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{brownian, constant_field};
    use crate::simulate::EnsembleSpec;
    use nalgebra::DMatrix;

    #[test]
    fn zero_bounded_part_gives_unit_weights() {
        let spec = EnsembleSpec::new(brownian(2), vec![0.0, 0.0], 0.5, 0.01, 200, 2);
        let w = girsanov_weights(&spec, &brownian(2), &brownian(2), 0.0).unwrap();
        assert!(w.weight.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn threshold_above_sup_gives_unit_weights() {
        let spec = EnsembleSpec::new(brownian(1), vec![0.0], 0.5, 0.01, 50, 2);
        let bb = constant_field(DMatrix::identity(1, 1), vec![0.8]).unwrap();
        let w = girsanov_weights(&spec, &brownian(1), &bb, 0.8).unwrap();
        assert!(w.weight.iter().all(|v| *v == 1.0));
        assert!(w.sup_deviation.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_bounded_part_is_a_martingale() {
        let spec = EnsembleSpec::new(brownian(2), vec![0.0, 0.0], 1.0, 0.05, 20_000, 7);
        let bb = constant_field(DMatrix::identity(2, 2), vec![0.5, -0.3]).unwrap();
        let w = girsanov_weights(&spec, &brownian(2), &bb, 0.0).unwrap();
        let e = w.mean_weight();
        assert!((e.value - 1.0).abs() < 4.0 * e.std_error, "{e:?}");
        // psi_T = -c.W_T - |c|^2 T / 2 exactly for constant c
        let ens = spec.simulate(true).unwrap();
        let p = ens.path(3);
        let wt: Vec<f64> = (0..2).map(|j| (0..ens.steps).map(|k| p.increment(k).unwrap()[j]).sum()).collect();
        let exact = -(0.5 * wt[0] - 0.3 * wt[1]) - 0.5 * 0.34;
        assert!((w.psi_terminal[3] - exact).abs() < 1e-12);
    }

    #[test]
    fn convergence_is_monotone() {
        let spec = EnsembleSpec::new(brownian(1), vec![0.0], 1.0, 0.05, 2000, 3);
        let bb = constant_field(DMatrix::identity(1, 1), vec![0.6]).unwrap();
        let profile = TimeProfile::uniform(0.0, 1.0, vec![0.6]).unwrap();
        let r = weight_convergence_check(&spec, &brownian(1), &bb, &[0.0, 0.3, 0.7], Some((&profile, 1.0))).unwrap();
        assert!(r.monotone);
        assert_eq!(r.estimates[2].value, 0.0);
        assert_eq!(r.bounds.as_ref().unwrap()[2], 0.0);
    }
}
