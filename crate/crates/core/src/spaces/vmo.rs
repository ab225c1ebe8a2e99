use nalgebra::DMatrix;

use super::sampler::{check_hits, pole_for, probe_seed, weighted_mean, BallSample};
use super::{sup_over_probes, Argmax, MorreyCertificate, ProbeValue, SamplerSpec};
use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::quadrature::GaussLegendre;

const TIME_NODES: usize = 3;

/// Sampled mean oscillation `a_rho^#` of `a = sigma sigma^*` over cylinders
/// `[t, t + rho^2) x B_rho(x)`, with `a_C(s)` the average of `a(s, .)` over the
/// ball at each fixed `s`. Matrix distances use the Frobenius norm.
pub fn vmo_modulus(field: &CoefficientField, rho: f64, sampler: &SamplerSpec) -> Result<MorreyCertificate> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid("rho must be positive"));
    }
    sampler.validate(field.dim())?;
    let centres = sampler.centres(field);
    let n = sampler.even_points();
    let dim = field.dim();
    let d1 = field.noise_dim();
    let gl = GaussLegendre::new(TIME_NODES);
    let eval = |t: f64, c: &[f64], r: f64| -> Result<ProbeValue> {
        let sample = BallSample::new(c, r, pole_for(field, c, r), n, probe_seed(sampler.seed, t, r, c));
        let (times, tw): (Vec<f64>, Vec<f64>) = if field.is_time_independent() {
            (vec![t], vec![1.0])
        } else {
            let (nodes, w) = gl.on_interval(t, t + r * r);
            (nodes, w.iter().map(|w| w / (r * r)).collect())
        };
        let mut total = 0.0;
        let mut err2 = 0.0;
        let mut s = vec![0.0; dim * d1];
        for (&ts, &w) in times.iter().zip(&tw) {
            let mut hits = 0;
            let mats: Vec<Option<DMatrix<f64>>> = (0..sample.len())
                .map(|i| match field.sigma_into(ts, sample.point(i), &mut s) {
                    Ok(()) => {
                        let m = DMatrix::from_row_slice(dim, d1, &s);
                        Ok(Some(&m * m.transpose()))
                    }
                    Err(Error::Singular { .. } | Error::NonFinite { .. }) => {
                        hits += 1;
                        Ok(None)
                    }
                    Err(e) => Err(e),
                })
                .collect::<Result<_>>()?;
            check_hits(hits, sample.len())?;
            let mut a_c = DMatrix::zeros(dim, dim);
            let mut wsum = 0.0;
            for (m, w) in mats.iter().zip(&sample.weights) {
                if let Some(m) = m {
                    a_c += m * *w;
                    wsum += w;
                }
            }
            a_c /= wsum;
            let dev: Vec<Option<f64>> = mats.iter().map(|m| m.as_ref().map(|m| (m - &a_c).norm())).collect();
            let (mean, err) = weighted_mean(&sample, &dev);
            total += w * mean;
            err2 += (w * err).powi(2);
        }
        let rel = if total > 0.0 { err2.sqrt() / total } else { 0.0 };
        Ok(ProbeValue { t, centre: c.to_vec(), rho: r, value: total, rel_error: rel })
    };
    let (best, centers_probed, radii_probed, samples) = sup_over_probes(
        &SamplerSpec { radius_levels: 1, ..sampler.clone() },
        &centres,
        &[rho],
        rho,
        eval,
    )?;
    Ok(MorreyCertificate {
        quantity: "vmo_modulus".into(),
        p: 1.0,
        r_max: rho,
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
    use crate::fields::{brownian, build_sigma_vmo, constant_field};
    use std::sync::Arc;

    #[test]
    fn x_independent_diffusion_has_zero_oscillation() {
        let f = brownian(2).with_sigma_fn(
            2,
            Arc::new(|t: f64, _x: &[f64], out: &mut [f64]| {
                out.copy_from_slice(&[1.0 + t * t, 0.3, 0.0, 2.0 - t.sin()]);
                Ok(())
            }),
            0.1,
        );
        let f = f.with_time_independent(false);
        let s = SamplerSpec { times: vec![0.0, 0.5], ..SamplerSpec::default() };
        let c = vmo_modulus(&f, 0.25, &s).unwrap();
        assert!(c.constant <= 1e-8, "{}", c.constant);
    }

    #[test]
    fn constant_matrix_gives_zero() {
        let f = constant_field(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 1.0]), vec![0.0, 0.0]).unwrap();
        assert!(vmo_modulus(&f, 0.1, &SamplerSpec::default()).unwrap().constant <= 1e-12);
    }

    #[test]
    fn oscillatory_example_is_positive() {
        let f = build_sigma_vmo(0.5, 1.0, 2).unwrap();
        let c = vmo_modulus(&f, 0.1, &SamplerSpec::centred_at(vec![vec![0.0, 0.0]])).unwrap();
        assert!(c.constant > 0.1);
        // far from the support there is nothing to oscillate
        let far = vmo_modulus(&f, 0.1, &SamplerSpec::centred_at(vec![vec![2.0, 0.0]])).unwrap();
        assert_eq!(far.constant, 0.0);
    }
}
