//! Sampled estimates of the function-space quantities that control the
//! coefficients: mean oscillation of `a = sigma sigma^*`, Morrey constants
//! of the drift, the weak-`L_d` criterion, the threshold split
//! `b = b_M + b_B` and its tail modulus.
//!
//! Every estimator returns a supremum over a finite probe set, so the values
//! are lower bounds on the true suprema.

mod certify;
mod morrey;
mod sampler;
mod split;
mod vmo;
mod weak_ld;

use serde::{Deserialize, Serialize};

pub use certify::{certify_assumption, CertificationReport, CertifyConfig, SplitSpec};
pub use morrey::morrey_constant;
pub use sampler::SamplerSpec;
pub use split::{beta_modulus, split_drift, DriftSplit, SplitConfig, TimeProfile};
pub use vmo::vmo_modulus;
pub use weak_ld::{weak_ld_criterion, WeakLdReport};

/// Where a sampled supremum was attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argmax {
    pub t: f64,
    pub x: Vec<f64>,
    pub rho: f64,
}

/// Result of a Morrey-type or oscillation estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorreyCertificate {
    pub quantity: String,
    pub p: f64,
    pub r_max: f64,
    pub constant: f64,
    pub argmax: Argmax,
    pub centers_probed: usize,
    pub radii_probed: Vec<f64>,
    pub times_probed: usize,
    pub samples: usize,
    /// Relative error of the ball average at the argmax.
    pub quadrature_error: f64,
}

impl MorreyCertificate {
    pub fn certificate(&self, threshold: Option<f64>) -> Certificate {
        Certificate {
            quantity: self.quantity.clone(),
            value: self.constant,
            argmax: Some(self.argmax.clone()),
            samples: self.samples,
            quadrature_error: self.quadrature_error,
            pass: threshold.is_none_or(|th| self.constant <= th),
            threshold,
        }
    }
}

/// Serialized form shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub quantity: String,
    pub value: f64,
    pub argmax: Option<Argmax>,
    pub samples: usize,
    pub quadrature_error: f64,
    pub pass: bool,
    pub threshold: Option<f64>,
}

/// One probe outcome.
#[derive(Debug, Clone)]
pub(crate) struct ProbeValue {
    pub t: f64,
    pub centre: Vec<f64>,
    pub rho: f64,
    pub value: f64,
    pub rel_error: f64,
}

/// First maximum in probe order, so the result does not depend on how the
/// probes were scheduled.
pub(crate) fn first_max(values: &[ProbeValue]) -> Option<&ProbeValue> {
    values.iter().fold(None, |best: Option<&ProbeValue>, v| match best {
        Some(b) if b.value >= v.value => Some(b),
        _ => Some(v),
    })
}

/// Runs a probe evaluator over a base probe set, then refines once around
/// the argmax.
pub(crate) fn sup_over_probes<F>(
    sampler: &SamplerSpec,
    centres: &[Vec<f64>],
    radii: &[f64],
    r_max: f64,
    eval: F,
) -> crate::Result<(ProbeValue, usize, Vec<f64>, usize)>
where
    F: Fn(f64, &[f64], f64) -> crate::Result<ProbeValue> + Sync,
{
    use rayon::prelude::*;
    let times = sampler.times();
    let mut probes: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    for &t in &times {
        for c in centres {
            for &r in radii {
                probes.push((t, c.clone(), r));
            }
        }
    }
    if probes.is_empty() {
        return Err(crate::Error::invalid("sampler produced no probes"));
    }
    let mut results: Vec<ProbeValue> =
        probes.par_iter().map(|(t, c, r)| eval(*t, c, *r)).collect::<crate::Result<_>>()?;
    let mut centre_count = centres.len();
    let mut radii_probed = radii.to_vec();
    if sampler.refine {
        let best = first_max(&results).expect("nonempty").clone();
        let mut extra: Vec<(f64, Vec<f64>, f64)> = Vec::new();
        for axis in 0..best.centre.len() {
            for sign in [-1.0, 1.0] {
                let mut c = best.centre.clone();
                c[axis] += sign * best.rho / 4.0;
                extra.push((best.t, c, best.rho));
                centre_count += 1;
            }
        }
        for r in [best.rho * std::f64::consts::SQRT_2, best.rho / std::f64::consts::SQRT_2] {
            if r <= r_max {
                extra.push((best.t, best.centre.clone(), r));
                radii_probed.push(r);
            }
        }
        let refined: Vec<ProbeValue> =
            extra.par_iter().map(|(t, c, r)| eval(*t, c, *r)).collect::<crate::Result<_>>()?;
        results.extend(refined);
    }
    let samples = results.len();
    let best = first_max(&results).expect("nonempty").clone();
    radii_probed.sort_by(|a, b| b.total_cmp(a));
    radii_probed.dedup();
    Ok((best, centre_count, radii_probed, samples))
}
