use serde::{Deserialize, Serialize};

use super::expansion::{chaos_coefficients, ChaosConfig};
use super::pde::SpaceFn;
use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::simulate::{derivative_flow, PathEnsemble};
use crate::stats::FunctionalEstimate;

/// Both sides of the gradient inequality for the chaos expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoundReport {
    /// `E [f_(eta_{r-t})(x_{r-t})]^2`
    pub lhs: FunctionalEstimate,
    /// Same estimate from the path scheme at twice the step.
    pub lhs_coarse: f64,
    pub discretization_error: f64,
    /// `[(T_{t,r} f)_(eta)(x)]^2`
    pub first_term: f64,
    /// First term plus directional energies of orders `1..=m`, for each `m`.
    pub partial_sums: Vec<f64>,
    pub rhs_quadrature_error: f64,
    /// `lhs - partial_sums.last()`
    pub margin: f64,
    /// `3 std_error + 2 discretization_error + rhs_quadrature_error`, plus
    /// a rounding allowance relative to the right side.
    pub tolerance: f64,
    pub pass: bool,
}

fn directional(f: &SpaceFn<'_>, x: &[f64], eta: &[f64]) -> f64 {
    let mut xp = x.to_vec();
    let mut acc = 0.0;
    for i in 0..x.len() {
        if eta[i] == 0.0 {
            continue;
        }
        let h = 1e-5 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let down = f(&xp);
        xp[i] = x[i];
        acc += eta[i] * (up - down) / (2.0 * h);
    }
    acc
}

fn lhs_samples(ens: &PathEnsemble, eta_paths: &[f64], f: &SpaceFn<'_>) -> Vec<f64> {
    let d = ens.dim;
    let stride = (ens.steps + 1) * d;
    (0..ens.paths)
        .map(|i| {
            let p = ens.path(i);
            let eta = &eta_paths[i * stride + ens.steps * d..(i + 1) * stride];
            directional(f, p.state(ens.steps), eta).powi(2)
        })
        .collect()
}

/// Checks `E[f_(eta_{r-t})(x_{r-t})]^2 >= [(T_{t,r} f)_(eta)]^2 + sum_m ...`
/// with orders `1..=n` on the right. `ens` must start at `(t, x)`, end at
/// `r` and carry increments; its stored flow is used when it starts at
/// `eta`, otherwise the flow is computed here.
#[allow(clippy::too_many_arguments)]
pub fn gradient_bound_check(
    field: &CoefficientField,
    f: &SpaceFn<'_>,
    t: f64,
    r: f64,
    x: &[f64],
    eta: &[f64],
    ens: &PathEnsemble,
    n: usize,
    cfg: &ChaosConfig,
) -> Result<GradientBoundReport> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
    if !close(ens.t0, t) || !close(ens.t0 + ens.horizon(), r) || ens.x0 != x {
        return Err(Error::Mismatch("ensemble does not start at (t, x) or end at r".into()));
    }
    if eta.len() != ens.dim {
        return Err(Error::invalid("direction has the wrong dimension"));
    }
    let stored = ens.eta.as_ref().filter(|e| e[..ens.dim] == *eta);
    let flow = match stored {
        Some(e) => e.clone(),
        None => derivative_flow(field, ens, eta)?,
    };
    let samples = lhs_samples(ens, &flow, f);
    let lhs = FunctionalEstimate::from_samples(&samples, 2);
    let coarse = ens.coarsened(field, None)?;
    let coarse_flow = derivative_flow(field, &coarse, eta)?;
    let lhs_coarse = crate::stats::mean_and_std_error(&lhs_samples(&coarse, &coarse_flow, f)).0;
    let discretization_error = (lhs.value - lhs_coarse).abs();

    let exp = chaos_coefficients(field, f, t, r, x, n, cfg)?;
    let first_term = exp.gradient.iter().zip(eta).map(|(g, e)| g * e).sum::<f64>().powi(2);
    let mut partial_sums = vec![first_term];
    let mut rhs_quadrature_error = 0.0;
    let mut acc = first_term;
    for m in 1..=n {
        let (v, err) = exp.directional_energy(m, eta)?;
        acc += v;
        rhs_quadrature_error += err;
        partial_sums.push(acc);
    }
    let margin = lhs.value - acc;
    // the step-halving difference matches the first-order bias only asymptotically
    let tolerance = 3.0 * lhs.std_error + 2.0 * discretization_error + rhs_quadrature_error + 1e-12 * acc.abs().max(1.0);
    Ok(GradientBoundReport {
        lhs,
        lhs_coarse,
        discretization_error,
        first_term,
        partial_sums,
        rhs_quadrature_error,
        margin,
        tolerance,
        pass: margin >= -tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{constant_field, ornstein_uhlenbeck};
    use crate::simulate::{simulate_paths, EnsembleSpec};
    use nalgebra::DMatrix;

    #[test]
    fn ou_linear_function_is_an_equality() {
        let field = ornstein_uhlenbeck(1, 1.0);
        let eta = [0.8];
        let ens = simulate_paths(&EnsembleSpec::new(field.clone(), vec![0.0], 1.0, 1e-3, 50, 21)).unwrap();
        let rep = gradient_bound_check(&field, &|x: &[f64]| x[0], 0.0, 1.0, &[0.0], &eta, &ens, 1, &ChaosConfig::default()).unwrap();
        let exact = 0.64 * (-2.0f64).exp();
        assert!((rep.lhs.value - exact).abs() < 1e-3);
        assert!((rep.first_term - exact).abs() < 1e-3);
        assert!((rep.partial_sums[1] - exact).abs() < 1e-3);
        assert!(rep.pass);
    }

    #[test]
    fn constant_test_function_gives_zero() {
        let field = constant_field(DMatrix::identity(1, 1), vec![0.2]).unwrap();
        let ens = simulate_paths(&EnsembleSpec::new(field.clone(), vec![0.0], 1.0, 0.01, 20, 1)).unwrap();
        let cfg = ChaosConfig { time_intervals: Some(8), ..ChaosConfig::default() };
        let rep = gradient_bound_check(&field, &|_: &[f64]| 1.0, 0.0, 1.0, &[0.0], &[1.0], &ens, 1, &cfg).unwrap();
        assert!(rep.lhs.value.abs() < 1e-12 && rep.partial_sums.iter().all(|v| v.abs() < 1e-12));
        assert!(rep.pass);
    }

    #[test]
    fn constant_coefficients_square_function() {
        // eta frozen; f_(eta) = 2 eta x, so the left side is 4 eta^2 E x_1^2 = 4 eta^2 (1 + c^2)
        let c = 0.3;
        let field = constant_field(DMatrix::identity(1, 1), vec![c]).unwrap();
        let ens = simulate_paths(&EnsembleSpec::new(field.clone(), vec![0.0], 1.0, 0.01, 40_000, 5)).unwrap();
        let cfg = ChaosConfig { time_intervals: Some(16), ..ChaosConfig::default() };
        let rep = gradient_bound_check(&field, &|x: &[f64]| x[0] * x[0], 0.0, 1.0, &[0.0], &[1.0], &ens, 1, &cfg).unwrap();
        let exact = 4.0 * (1.0 + c * c);
        assert!((rep.partial_sums[1] - exact).abs() < 1e-2, "{:?}", rep.partial_sums);
        assert!((rep.lhs.value - exact).abs() < 4.0 * rep.lhs.std_error);
        assert!(rep.pass);
    }
}
