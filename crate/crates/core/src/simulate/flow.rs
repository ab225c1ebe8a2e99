use super::ensemble::{PathEnsemble, PathSource, PathView};
use crate::error::{Error, Result};
use crate::fields::CoefficientField;

/// Central-difference Jacobians of `sigma` (`d x d1` per column of `x`) and
/// `b` at `(t, x)`. Column `i` of each holds the derivative along `e_i`.
fn jacobians(field: &CoefficientField, t: f64, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = field.dim();
    let d1 = field.noise_dim();
    let mut ds = vec![0.0; d * d * d1];
    let mut db = vec![0.0; d * d];
    let mut xp = x.to_vec();
    let mut sp = vec![0.0; d * d1];
    let mut sm = vec![0.0; d * d1];
    let mut bp = vec![0.0; d];
    let mut bm = vec![0.0; d];
    for i in 0..d {
        let h = 1e-5 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        field.sigma_into(t, &xp, &mut sp)?;
        field.drift_into(t, &xp, &mut bp)?;
        xp[i] = x[i] - h;
        field.sigma_into(t, &xp, &mut sm)?;
        field.drift_into(t, &xp, &mut bm)?;
        xp[i] = x[i];
        for k in 0..d * d1 {
            ds[i * d * d1 + k] = (sp[k] - sm[k]) / (2.0 * h);
        }
        for k in 0..d {
            db[i * d + k] = (bp[k] - bm[k]) / (2.0 * h);
        }
    }
    Ok((ds, db))
}

/// Euler scheme for the derivative flow along one stored path:
/// `eta += sigma_(eta) dw + b_(eta) dt`, where `g_(eta) = sum_i eta_i d_i g`.
/// The update is linear in `eta` for a fixed path.
pub fn flow_along(field: &CoefficientField, view: &PathView<'_>, eta0: &[f64]) -> Result<Vec<f64>> {
    let d = view.dim;
    let d1 = view.noise_dim;
    if eta0.len() != d || field.dim() != d || field.noise_dim() != d1 {
        return Err(Error::invalid("direction or field does not match the ensemble"));
    }
    let steps = view.steps();
    let mut eta = Vec::with_capacity((steps + 1) * d);
    eta.extend_from_slice(eta0);
    let mut next = vec![0.0; d];
    for k in 0..steps {
        let t = view.time(k);
        let (ds, db) = jacobians(field, t, view.state(k)).map_err(|e| match e {
            Error::Singular { .. } | Error::NonFinite { .. } => Error::FieldDefect(format!(
                "derivative evaluation failed on path {} at step {k}: {e}",
                view.index
            )),
            other => other,
        })?;
        let dw = view.increment(k)?;
        let cur = &eta[k * d..(k + 1) * d];
        next.copy_from_slice(cur);
        for i in 0..d {
            if cur[i] == 0.0 {
                continue;
            }
            for r in 0..d {
                let mut v = db[i * d + r] * view.dt;
                for j in 0..d1 {
                    v += ds[i * d * d1 + r * d1 + j] * dw[j];
                }
                next[r] += cur[i] * v;
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { path: view.index, step: k + 1 });
        }
        eta.extend_from_slice(&next);
    }
    Ok(eta)
}

/// Derivative flow for every path, `paths x (steps+1) x d`, driven by the
/// ensemble's own increments.
pub fn derivative_flow<S: PathSource>(field: &CoefficientField, src: &S, eta0: &[f64]) -> Result<Vec<f64>> {
    let per_path = src.map_paths(|p| flow_along(field, &p, eta0))?;
    Ok(per_path.concat())
}

impl PathEnsemble {
    /// Attaches the derivative flow started from `eta0`.
    pub fn with_derivative_flow(mut self, field: &CoefficientField, eta0: &[f64]) -> Result<Self> {
        self.eta = Some(derivative_flow(field, &self, eta0)?);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{constant_field, ornstein_uhlenbeck};
    use crate::simulate::{simulate_paths, EnsembleSpec};
    use nalgebra::DMatrix;

    #[test]
    fn constant_coefficients_keep_eta() {
        let f = constant_field(DMatrix::identity(2, 2), vec![0.3, -0.2]).unwrap();
        let ens = simulate_paths(&EnsembleSpec::new(f.clone(), vec![0.0, 0.0], 0.5, 0.05, 20, 1)).unwrap();
        let eta = derivative_flow(&f, &ens, &[1.0, 2.0]).unwrap();
        assert!(eta.chunks(2).all(|e| e == [1.0, 2.0]));
        let zero = derivative_flow(&f, &ens, &[0.0, 0.0]).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ou_flow_decays() {
        let f = ornstein_uhlenbeck(1, 1.0);
        let dt = 1e-3;
        let ens = simulate_paths(&EnsembleSpec::new(f.clone(), vec![0.4], 1.0, dt, 5, 2)).unwrap();
        let ens = ens.with_derivative_flow(&f, &[1.5]).unwrap();
        let p = ens.path(3);
        let last = p.eta(p.steps()).unwrap()[0];
        assert!((last - 1.5 * (1.0 - dt).powi(1000)).abs() < 1e-8);
        assert!((last - 1.5 * (-1.0f64).exp()).abs() < 1.5 * dt);
    }
}
