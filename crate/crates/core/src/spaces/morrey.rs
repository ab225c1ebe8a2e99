use super::sampler::{check_hits, pole_for, probe_seed, weighted_mean, BallSample};
use super::{sup_over_probes, Argmax, MorreyCertificate, ProbeValue, SamplerSpec};
use crate::error::{Error, Result};
use crate::fields::CoefficientField;

/// Sampled `sup rho * (avg_B |b(t, .)|^p)^{1/p}` over probed `t`, balls of
/// radius `rho <= r_max`.
pub fn morrey_constant(b: &CoefficientField, p: f64, r_max: f64, sampler: &SamplerSpec) -> Result<MorreyCertificate> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid("Morrey exponent must be at least 1"));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::invalid("r_max must be positive"));
    }
    sampler.validate(b.dim())?;
    let centres = sampler.centres(b);
    let radii = sampler.radii(r_max);
    let n = sampler.even_points();
    let dim = b.dim();
    let eval = |t: f64, c: &[f64], rho: f64| -> Result<ProbeValue> {
        let sample = BallSample::new(c, rho, pole_for(b, c, rho), n, probe_seed(sampler.seed, t, rho, c));
        let mut out = vec![0.0; dim];
        let mut hits = 0;
        let values: Vec<Option<f64>> = (0..sample.len())
            .map(|i| match b.drift_into(t, sample.point(i), &mut out) {
                Ok(()) => Some(out.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p)),
                Err(Error::Singular { .. } | Error::NonFinite { .. }) => {
                    hits += 1;
                    None
                }
                Err(_) => Some(f64::NAN),
            })
            .collect();
        if values.iter().any(|v| v.is_some_and(f64::is_nan)) {
            return Err(Error::FieldDefect("drift evaluation failed inside a probe ball".into()));
        }
        check_hits(hits, sample.len())?;
        let (mean, err) = weighted_mean(&sample, &values);
        let rel = if mean > 0.0 { err / mean / p } else { 0.0 };
        Ok(ProbeValue { t, centre: c.to_vec(), rho, value: rho * mean.powf(1.0 / p), rel_error: rel })
    };
    let (best, centers_probed, radii_probed, samples) = sup_over_probes(sampler, &centres, &radii, r_max, eval)?;
    Ok(MorreyCertificate {
        quantity: "morrey_constant".into(),
        p,
        r_max,
        constant: best.value,
        argmax: Argmax { t: best.t, x: best.centre, rho: best.rho },
        centers_probed,
        radii_probed,
        times_probed: sampler.times().len(),
        samples,
        quadrature_error: best.rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{brownian, build_drift_inverse, build_drift_parabolic, constant_field, Direction};
    use nalgebra::DMatrix;

    #[test]
    fn zero_drift_gives_zero() {
        let c = morrey_constant(&brownian(2), 2.0, 0.5, &SamplerSpec::default()).unwrap();
        assert_eq!(c.constant, 0.0);
    }

    #[test]
    fn constant_drift_attains_sup_at_largest_radius() {
        let f = constant_field(DMatrix::identity(2, 2), vec![3.0, 4.0]).unwrap();
        let c = morrey_constant(&f, 2.0, 0.5, &SamplerSpec::default()).unwrap();
        assert!((c.constant - 2.5).abs() < 1e-12 * 2.5);
        assert_eq!(c.argmax.rho, 0.5);
    }

    #[test]
    fn inverse_drift_centred_value() {
        let f = build_drift_inverse(1.0, 3, Direction::RadialIn).unwrap();
        let c = morrey_constant(&f, 2.0, 0.5, &SamplerSpec::default()).unwrap();
        assert!((c.constant - 3f64.sqrt()).abs() < 0.02 * 3f64.sqrt(), "{}", c.constant);
        assert!(c.radii_probed.iter().all(|r| *r > 0.0 && *r <= 0.5));
    }

    #[test]
    fn parabolic_drift_bounded_constant() {
        let f = build_drift_parabolic(1.0, 3, Direction::RadialIn).unwrap();
        let s = SamplerSpec { times: vec![0.0, 0.01, 0.1], ..SamplerSpec::default() };
        let c = morrey_constant(&f, 2.0, 1.0, &s).unwrap();
        // (avg_{B_rho} |x|^{-2})^{1/2} rho = sqrt(3) bounds every probe at t = 0
        assert!(c.constant > 1.0 && c.constant < 1.05 * 3f64.sqrt(), "{}", c.constant);
    }
}
