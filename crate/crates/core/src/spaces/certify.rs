use serde::{Deserialize, Serialize};

use super::{morrey_constant, split_drift, vmo_modulus, Certificate, SamplerSpec, SplitConfig};
use crate::error::{Error, Result};
use crate::fields::CoefficientField;

/// Split requested before certifying the Morrey clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub p: f64,
    pub n_hat: f64,
    pub horizon: (f64, f64),
    #[serde(default)]
    pub config: SplitConfig,
}

/// Thresholds and radii of the standing assumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub theta: f64,
    pub b_hat_m: f64,
    pub r_a: f64,
    pub r_b: f64,
    pub p_b: f64,
    #[serde(default)]
    pub sampler: SamplerSpec,
    /// Without a split the whole drift is treated as the Morrey part.
    #[serde(default)]
    pub split: Option<SplitSpec>,
    /// Oscillation radii `r_a * 2^-k`, `k < vmo_levels`.
    #[serde(default = "default_vmo_levels")]
    pub vmo_levels: usize,
}

fn default_vmo_levels() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub field: String,
    pub pass: bool,
    pub clauses: Vec<Certificate>,
    /// Sampler seed, recorded so the run can be repeated.
    pub seed: u64,
}

/// Checks the oscillation, Morrey and bounded-part clauses by sampling.
pub fn certify_assumption(field: &CoefficientField, cfg: &CertifyConfig) -> Result<CertificationReport> {
    for (name, v) in [("theta", cfg.theta), ("b_hat_m", cfg.b_hat_m), ("r_a", cfg.r_a), ("r_b", cfg.r_b)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
    }
    let d = field.dim() as f64;
    if !(cfg.p_b > d / 2.0 && cfg.p_b <= d) {
        return Err(Error::invalid(format!("p_b must lie in (d/2, d], got {}", cfg.p_b)));
    }
    if cfg.vmo_levels == 0 {
        return Err(Error::invalid("vmo_levels must be at least 1"));
    }

    let mut vmo_best: Option<super::MorreyCertificate> = None;
    for k in 0..cfg.vmo_levels {
        let rho = cfg.r_a * 0.5f64.powi(k as i32);
        let c = vmo_modulus(field, rho, &cfg.sampler)?;
        if vmo_best.as_ref().is_none_or(|b| c.constant > b.constant) {
            vmo_best = Some(c);
        }
    }
    let vmo = vmo_best.expect("at least one level").certificate(Some(cfg.theta));

    let split = match &cfg.split {
        Some(s) => Some(split_drift(field, s.p, s.n_hat, s.horizon, &s.config)?),
        None => None,
    };
    let b_m = split.as_ref().map_or(field, |s| &s.b_m);
    let mut morrey = morrey_constant(b_m, cfg.p_b, cfg.r_b, &cfg.sampler)?.certificate(Some(cfg.b_hat_m));
    morrey.quantity = "morrey_constant_b_M".into();

    let norm = split.as_ref().map_or(0.0, |s| s.b_b_norm);
    let bounded = Certificate {
        quantity: "b_B_norm".into(),
        value: norm,
        argmax: None,
        samples: split.as_ref().map_or(0, |s| s.b_tilde.values.len()),
        quadrature_error: split.as_ref().map_or(0.0, |s| s.relative_gap()),
        pass: norm.is_finite(),
        threshold: None,
    };
    let clauses = vec![vmo, morrey, bounded];
    Ok(CertificationReport {
        field: field.name().to_string(),
        pass: clauses.iter().all(|c| c.pass),
        clauses,
        seed: cfg.sampler.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{brownian, build_drift_inverse, build_drift_parabolic, Direction};

    fn config(b_hat_m: f64, p_b: f64) -> CertifyConfig {
        CertifyConfig {
            theta: 0.1,
            b_hat_m,
            r_a: 0.5,
            r_b: 0.5,
            p_b,
            sampler: SamplerSpec { points_per_ball: 1024, ..SamplerSpec::default() },
            split: None,
            vmo_levels: 2,
        }
    }

    #[test]
    fn brownian_passes_with_zero_values() {
        let r = certify_assumption(&brownian(2), &config(0.1, 1.5)).unwrap();
        assert!(r.pass);
        assert!(r.clauses.iter().all(|c| c.value == 0.0));
    }

    #[test]
    fn large_inverse_drift_fails_morrey_clause() {
        // sup is sqrt(3) * gamma; 0.5 * sqrt(3) > 0.8
        let b = build_drift_inverse(0.5, 3, Direction::RadialIn).unwrap();
        let r = certify_assumption(&b, &config(0.8, 2.0)).unwrap();
        assert!(!r.pass);
        assert!(!r.clauses[1].pass);
        assert!(r.clauses[0].pass);
    }

    #[test]
    fn small_parabolic_drift_passes() {
        let b = build_drift_parabolic(0.05, 3, Direction::RadialIn).unwrap();
        let r = certify_assumption(&b, &config(0.2, 2.0)).unwrap();
        assert!(r.pass, "{:?}", r.clauses[1]);
    }

    #[test]
    fn report_serializes_with_certificate_fields() {
        let r = certify_assumption(&brownian(1), &config(0.1, 1.0)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["quantity", "value", "argmax", "samples", "quadrature_error", "pass", "threshold"] {
            assert!(v["clauses"][0].get(key).is_some(), "{key}");
        }
    }
}
