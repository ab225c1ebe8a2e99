//! Acceptance criteria 1-14. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion fails. Oracles are computed here, independently
//! of the library estimators, or frozen from closed forms.

use std::io::Write;
use std::time::Instant;

use msde_core::chaos::{chaos_coefficients, gradient_bound_check, project_mc, range_projection, ChaosConfig};
use msde_core::fields::{
    brownian, build_counterexample_drift, build_drift_inverse, build_drift_parabolic, build_fractal_drift,
    build_sigma_vmo, constant_field, fractal_radii, ornstein_uhlenbeck, smooth_bump, smooth_bump_drift, CoefficientField,
    Direction,
};
use msde_core::mollify::{ellipticity_check, mollify, select_m, truncate_sigma, Kernel, MollifiedFamily, MollifyConfig, Region};
use msde_core::quadrature::GaussLegendre;
use msde_core::rng::UniformStream;
use msde_core::simulate::{
    calibrate_threshold, density_estimate, fdd_compare, girsanov_weights, modulus_statistics, occupation_functional,
    time_integrated_norm, weight_convergence_check, EnsembleSpec, TestFunctional,
};
use msde_core::spaces::{morrey_constant, split_drift, vmo_modulus, SamplerSpec, SplitConfig};
use msde_core::stats::linear_fit;
use msde_core::verify::{random_sigma, run_suite, Suite};
use nalgebra::DMatrix;

type Verdict = msde_core::Result<(bool, String)>;

const PI: f64 = std::f64::consts::PI;

fn composite_gl(a: f64, b: f64, panels: usize, nodes: usize) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(nodes);
    let h = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|k| {
            let (x, w) = gl.on_interval(a + k as f64 * h, a + (k + 1) as f64 * h);
            x.into_iter().zip(w).collect::<Vec<_>>()
        })
        .collect()
}

// 1. chaos identity ---------------------------------------------------------

fn criterion_1() -> Verdict {
    // E (w_1^2 - 1)^2 = E w^4 - 2 E w^2 + 1 = 2; f(w_1) = 1 + I_2 exactly.
    let exact_1 = 2.0;
    let field = brownian(1);
    let f = |x: &[f64]| x[0] * x[0];
    let exp = chaos_coefficients(&field, &f, 0.0, 1.0, &[0.0], 2, &ChaosConfig::default())?;
    let r1 = exp.residual_energy(1)?;
    let r2 = exp.residual_energy(2)?;
    let ens = EnsembleSpec::new(field, vec![0.0], 1.0, 1.0 / 64.0, 20_000, 101).simulate(true)?;
    let mc = project_mc(&ens, &f, 1.0, 1, None)?;
    let ok = (r1 - exact_1).abs() <= 1e-3 && (mc.residual - exact_1).abs() <= 0.1 * exact_1 && r2 <= 1e-3;
    Ok((ok, format!("residual(1) = {r1:.6}, project_mc = {:.4} +- {:.4}, residual(2) = {r2:.2e}", mc.residual, mc.std_error)))
}

// 2. Morrey estimator ---------------------------------------------------------

fn criterion_2() -> Verdict {
    // rho (avg_{B_rho(0)} |x|^-2)^{1/2} in d = 3: avg = (3 / rho^3) int_0^rho dr = 3 / rho^2
    let radial: f64 = composite_gl(0.0, 1.0, 4, 16).iter().map(|(r, w)| w * r * r * r.powi(-2)).sum::<f64>() * 3.0;
    let oracle = radial.sqrt();
    let inverse = build_drift_inverse(1.0, 3, Direction::RadialIn)?;
    let c1 = morrey_constant(&inverse, 2.0, 1.0, &SamplerSpec::default())?.constant;
    let constant = constant_field(DMatrix::identity(2, 2), vec![3.0, 4.0])?;
    let c2 = morrey_constant(&constant, 2.0, 0.5, &SamplerSpec::default())?.constant;
    let e1 = (c1 / oracle - 1.0).abs();
    let e2 = (c2 / 2.5 - 1.0).abs();
    Ok((e1 <= 0.02 && e2 <= 0.005, format!("inverse {c1:.5} vs {oracle:.5} (rel {e1:.2e}); constant {c2:.5} vs 2.5 (rel {e2:.2e})")))
}

// 3. split identity -----------------------------------------------------------

fn criterion_3() -> Verdict {
    let b = smooth_bump_drift(1.0, 1.0, 2)?;
    let s = split_drift(&b, 3.0, 1.0, (0.0, 1.0), &SplitConfig::default())?;
    let gap = s.relative_gap();
    Ok((gap <= 5e-3, format!("int lambda^2 = {:.6}, N^2 int (..)^(q/p) = {:.6}, gap {gap:.2e}", s.lambda_sq_integral, s.rhs_integral)))
}

// 4. VMO modulus --------------------------------------------------------------

/// Mean oscillation of `a = g(|x|)^2 I` over `B_rho(0)` in the plane, by radial
/// quadrature at four times the resolution of the estimator's default
/// point count, with `r = rho e^{-u}` to resolve the log-log phase.
fn vmo_radial_oracle(zeta: f64, amp: f64, rho: f64, d: usize, points: usize) -> f64 {
    let g = |r: f64| {
        if r >= zeta {
            2.0
        } else {
            2.0 + amp * smooth_bump(r / zeta) * r.ln().abs().ln().sin()
        }
    };
    let nodes = composite_gl(0.0, 40.0, 4 * points / 64, 16);
    let avg = |h: &dyn Fn(f64) -> f64| -> f64 {
        // (2 / rho^2) int_0^rho h(r) r dr with r = rho e^{-u}, dr = -r du
        nodes.iter().map(|(u, w)| {
            let r = rho * (-u).exp();
            w * h(r) * r * r
        }).sum::<f64>() * 2.0 / (rho * rho)
    };
    let mean_a = avg(&|r| g(r).powi(2));
    (d as f64).sqrt() * avg(&|r| (g(r).powi(2) - mean_a).abs())
}

fn criterion_4() -> Verdict {
    let flat = constant_field(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]), vec![0.0, 0.0])?;
    let zero = vmo_modulus(&flat, 0.5, &SamplerSpec::default())?.constant;
    let field = build_sigma_vmo(0.5, 1.0, 2)?;
    let sampler = SamplerSpec::centred_at(vec![vec![0.0, 0.0]]);
    let est = vmo_modulus(&field, 0.1, &sampler)?.constant;
    let oracle = vmo_radial_oracle(0.5, 1.0, 0.1, 2, sampler.points_per_ball);
    let rel = (est / oracle - 1.0).abs();
    Ok((zero <= 1e-8 && rel <= 0.05, format!("x-independent a: {zero:.2e}; oscillatory {est:.6} vs oracle {oracle:.6} (rel {rel:.2e})")))
}

// 5. range projection ---------------------------------------------------------

fn criterion_5() -> Verdict {
    let mut rng = UniformStream::new(55, 0);
    let (mut worst, mut deficient, mut wide) = (0.0f64, 0, 0);
    for _ in 0..200 {
        let s = random_sigma(&mut rng, 5);
        let rp = range_projection(&s);
        deficient += usize::from(rp.rank < s.nrows().min(s.ncols()));
        wide += usize::from(s.ncols() > s.nrows());
        worst = rp.identity_defects().into_iter().fold(worst, f64::max);
    }
    Ok((worst <= 1e-10 && deficient > 0 && wide > 0, format!("max defect {worst:.2e} over 200 ({deficient} rank deficient, {wide} with d1 > d)")))
}

// 6. Girsanov -----------------------------------------------------------------

fn criterion_6() -> Verdict {
    let sigma = brownian(2);
    let spec = EnsembleSpec::new(sigma.clone(), vec![0.0, 0.0], 1.0, 0.01, 100_000, 606);
    let zero = constant_field(DMatrix::identity(2, 2), vec![0.0, 0.0])?;
    let w0 = girsanov_weights(&spec.clone().with_paths(1000), &sigma, &zero, 0.0)?;
    let exact = w0.weight.iter().all(|w| *w == 1.0);
    let b = constant_field(DMatrix::identity(2, 2), vec![0.5, -0.25])?;
    let mean = girsanov_weights(&spec, &sigma, &b, 0.0)?.mean_weight();
    let z = (mean.value - 1.0).abs() / mean.std_error;
    let bump = smooth_bump_drift(2.0, 1.0, 2)?;
    let conv = weight_convergence_check(&spec.clone().with_paths(5000), &sigma, &bump, &[0.0, 0.5, 1.0, 1.5, 2.0, 3.0], None)?;
    Ok((
        exact && z <= 4.0 && conv.monotone,
        format!("zero drift exact: {exact}; mean weight {:.5} ({z:.2} se); trend violation {:.2} se", mean.value, conv.monotone_violation),
    ))
}

// 7. occupation ---------------------------------------------------------------

/// `P(|y + w_tau| < 1)` for `|y| = r < 1`, planar: along each direction the
/// exit distance is `rho_2(theta)`, and `|w_tau|` is Rayleigh.
fn stay_probability(r: f64, tau: f64) -> f64 {
    let n = 256;
    (0..n)
        .map(|k| {
            let c = (2.0 * PI * k as f64 / n as f64).cos();
            let rho2 = -r * c + (r * r * c * c + 1.0 - r * r).sqrt();
            1.0 - (-rho2 * rho2 / (2.0 * tau)).exp()
        })
        .sum::<f64>()
        / n as f64
}

/// `E (int_0^1 1{|w_s| < 1} ds)^2 = 2 int_{s < u} P(|w_s| < 1, |w_u| < 1)`.
fn occupation_second_moment(nodes: usize) -> f64 {
    let outer = composite_gl(0.0, 1.0, 4, nodes / 4);
    let radial = composite_gl(0.0, 1.0, 4, 16);
    let mut total = 0.0;
    for &(sig, ws) in &outer {
        let s = sig * sig;
        let umax = (1.0 / s.sqrt()).min(10.0);
        for &(v, wv) in &outer {
            let tau = (1.0 - s) * v * v;
            let joint: f64 = radial
                .iter()
                .map(|(x, wx)| {
                    let u = x * umax;
                    wx * umax * u * (-u * u / 2.0).exp() * stay_probability(s.sqrt() * u, tau)
                })
                .sum();
            total += ws * 2.0 * sig * wv * 2.0 * (1.0 - s) * v * joint;
        }
    }
    2.0 * total
}

fn criterion_7() -> Verdict {
    let first: f64 = composite_gl(0.0, 1.0, 64, 16).iter().map(|(s, w)| w * (1.0 - (-1.0 / (2.0 * s)).exp())).sum();
    let second = occupation_second_moment(48);
    let second_fine = occupation_second_moment(96);
    let spec = EnsembleSpec::new(brownian(2), vec![0.0, 0.0], 1.0, 1e-3, 100_000, 707);
    let f = |t: f64, x: &[f64]| if t <= 1.0 && x[0] * x[0] + x[1] * x[1] < 1.0 { 1.0 } else { 0.0 };
    let m1 = occupation_functional(&spec, &f, 1)?;
    let m2 = occupation_functional(&spec, &f, 2)?;
    let z1 = (m1.value - first).abs() / m1.std_error;
    let z2 = (m2.value - second).abs() / m2.std_error;
    Ok((
        z1 <= 3.0 && z2 <= 3.0,
        format!(
            "m=1 {:.5} vs {first:.5} ({z1:.2} se); m=2 {:.5} vs {second:.5} ({z2:.2} se, oracle refinement {:.1e})",
            m1.value,
            m2.value,
            (second - second_fine).abs()
        ),
    ))
}

// 8. scaling ------------------------------------------------------------------

fn criterion_8() -> Verdict {
    let (d, p, q) = (2.0, 4.0, 4.0);
    let expected = 1.0 - 0.5 * (d / p + 2.0 / q);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, t) in [0.25f64, 0.5, 1.0].into_iter().enumerate() {
        let spec = EnsembleSpec::new(brownian(2), vec![0.0, 0.0], t, t * 1e-3, 20_000, 800 + k as u64);
        let f = move |_s: f64, x: &[f64]| if x[0] * x[0] + x[1] * x[1] < t { 1.0 } else { 0.0 };
        let occ = occupation_functional(&spec, &f, 1)?.value;
        // ||1{|x| < sqrt T} 1{s < T}||_{L_{p,q}} = T^{1/q} (pi T)^{1/p}
        let norm = t.powf(1.0 / q) * (PI * t).powf(1.0 / p);
        xs.push(t.ln());
        ys.push((occ / norm).ln());
    }
    let (slope, _) = linear_fit(&xs, &ys);
    let rel = (slope / expected - 1.0).abs();
    Ok((rel <= 0.15, format!("fitted exponent {slope:.4} vs {expected} (rel {rel:.2e})")))
}

// 9. modulus ------------------------------------------------------------------

fn criterion_9() -> Verdict {
    let spec = EnsembleSpec::new(brownian(1), vec![0.0], 0.32, 1e-4, 10_000, 909);
    let windows = [0.02, 0.04, 0.08, 0.16, 0.32];
    let s2 = modulus_statistics(&spec, 2, &windows)?.slope;
    let s4 = modulus_statistics(&spec, 4, &windows)?.slope;
    Ok(((s2 - 1.0).abs() <= 0.1 && (s4 - 2.0).abs() <= 0.2, format!("slope n=2 {s2:.4} (vs 1), n=4 {s4:.4} (vs 2)")))
}

// 10. density -----------------------------------------------------------------

fn criterion_10() -> Verdict {
    let spec = EnsembleSpec::new(brownian(2), vec![0.0, 0.0], 1.0, 1.0 / 16.0, 100_000, 1010);
    let kde = density_estimate(&spec, 1.0, None, 1.0, None)?;
    let l1 = kde.l1_distance(|x| (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp() / (2.0 * PI));
    let (p, q) = (1.9f64, 10.0f64);
    let (pp, qq) = (p / (p - 1.0), q / (q - 1.0));
    // ||p_t||_{p'} by radial quadrature at t = 1, then the exact scaling
    // ||p_t||_{p'} = ||p_1||_{p'} t^{-(1 - 1/p')}
    let radial: f64 = composite_gl(0.0, 20.0, 20, 16)
        .iter()
        .map(|(r, w)| w * 2.0 * PI * r * ((-r * r / 2.0).exp() / (2.0 * PI)).powf(pp))
        .sum();
    let n1 = radial.powf(1.0 / pp);
    let beta = qq * (1.0 - 1.0 / pp);
    let oracle = n1.powf(qq) / (1.0 - beta);
    let times: Vec<f64> = (1..=16).map(|k| k as f64 / 16.0).collect();
    let ti = time_integrated_norm(&spec, &times, pp, qq, None)?;
    let rel = (ti.integral / oracle - 1.0).abs();
    Ok((
        l1 <= 0.05 && ti.finite && rel <= 0.1,
        format!("KDE L1 {l1:.4}; time integral {:.5} vs {oracle:.5} (rel {rel:.2e})", ti.integral),
    ))
}

// 11. weak uniqueness evidence ------------------------------------------------

fn criterion_11() -> Verdict {
    let base = build_drift_parabolic(0.1, 2, Direction::RadialIn)?;
    let bump = mollify(&base, 4, &MollifyConfig { kernel: Kernel::Bump, nodes_per_axis: 6 })?;
    let poly = mollify(&base, 4, &MollifyConfig { kernel: Kernel::Polynomial { k: 2 }, nodes_per_axis: 6 })?;
    let m = 10_000;
    let x0 = vec![0.0, 0.0];
    let dt = 1.0 / 64.0;
    let a = EnsembleSpec::new(bump.clone(), x0.clone(), 1.0, dt, m, 1101).simulate(false)?;
    let a2 = EnsembleSpec::new(bump, x0.clone(), 1.0, dt, m, 1102).simulate(false)?;
    let b = EnsembleSpec::new(poly, x0, 1.0, dt, m, 1103).simulate(false)?;
    let times = [0.25, 0.5, 1.0];
    let funcs = TestFunctional::default_set(2);
    let cal = calibrate_threshold(&a, &a2, &times, &funcs, 200, 0.99, 1104)?;
    let rep = fdd_compare(&a, &b, &times, &funcs, cal.threshold)?;
    Ok((
        cal.null_pass && rep.pass,
        format!("max KS {:.4} vs threshold {:.4}; null run {:.4}", rep.max_distance, cal.threshold, cal.null_distance),
    ))
}

// 12. mollification and truncation ---------------------------------------------

fn criterion_12() -> Verdict {
    let cfg = MollifyConfig::default();
    let sampler = SamplerSpec { points_per_ball: 2048, ..SamplerSpec::default() };
    let drifts: Vec<CoefficientField> = vec![
        build_drift_inverse(1.0, 2, Direction::RadialIn)?,
        build_drift_parabolic(0.5, 2, Direction::RadialIn)?,
        build_fractal_drift(1.5, &fractal_radii(2, 1.5, 4)?, 2)?,
        build_counterexample_drift(2)?,
        smooth_bump_drift(1.0, 1.0, 2)?,
        ornstein_uhlenbeck(2, 1.0),
    ];
    let mut worst_excess = f64::NEG_INFINITY;
    let mut notes = Vec::new();
    for f in &drifts {
        let before = morrey_constant(f, 1.5, 0.5, &sampler)?;
        let after = morrey_constant(&mollify(f, 4, &cfg)?, 1.5, 0.5, &sampler)?;
        let tol = before.quadrature_error * before.constant + after.quadrature_error * after.constant;
        let excess = (after.constant - before.constant - tol) / before.constant.max(1e-300);
        worst_excess = worst_excess.max(excess);
        notes.push(format!("{} {:.3}->{:.3}", f.name(), before.constant, after.constant));
    }
    let vf = build_sigma_vmo(0.5, 1.0, 2)?;
    let vs = SamplerSpec::centred_at(vec![vec![0.0, 0.0], vec![0.2, 0.0]]);
    let v0 = vmo_modulus(&vf, 0.25, &vs)?;
    let v1 = vmo_modulus(&mollify(&vf, 4, &cfg)?, 0.25, &vs)?;
    let vtol = v0.quadrature_error * v0.constant + v1.quadrature_error * v1.constant;
    worst_excess = worst_excess.max((v1.constant - v0.constant - vtol) / v0.constant);
    notes.push(format!("vmo {:.4}->{:.4}", v0.constant, v1.constant));

    let m = select_m(64, vf.delta(), 1.0)? as i64;
    let (trunc, _) = truncate_sigma(&MollifiedFamily::new(&vf, 64, m, &cfg)?)?;
    let region = Region { t: (0.0, 1.0), x: vec![(-1.0, 1.0); 2] };
    let ell = ellipticity_check(&trunc, &region, 20_000, 1212)?;

    let mut select_ok = true;
    for n in [1u64, 2, 5, 16, 99, 1000, 65_536] {
        for delta in [0.01, 0.1, 1.0 / 9.0, 0.5, 1.0] {
            for nd in [0.3, 1.0, 7.0] {
                let m = select_m(n, delta, nd)?;
                let ok = |m: u64| nd * m as f64 / n as f64 <= delta.sqrt() / 4.0;
                select_ok &= ok(m) && !ok(m + 1);
            }
        }
    }
    Ok((
        worst_excess <= 0.0 && ell.pass && select_ok,
        format!(
            "{}; m = {m}, eigenvalues [{:.3}, {:.3}] in [{:.3}, {:.3}]; select_m maximal: {select_ok}",
            notes.join(", "),
            ell.min,
            ell.max,
            ell.lower,
            ell.upper
        ),
    ))
}

// 13. gradient inequality -----------------------------------------------------

fn criterion_13() -> Verdict {
    let field = ornstein_uhlenbeck(1, 1.0);
    let (x, eta, r) = (0.3, 1.0, 1.0);
    let ens = EnsembleSpec::new(field.clone(), vec![x], r, 1e-3, 2000, 1313).simulate(true)?;
    let f = |y: &[f64]| y[0];
    let rep = gradient_bound_check(&field, &f, 0.0, r, &[x], &[eta], &ens, 2, &ChaosConfig::default())?;
    let exact = eta * eta * (-2.0 * r).exp();
    let se = rep.lhs.std_error;
    let gap_first = rep.lhs.value - rep.first_term;
    let rhs = *rep.partial_sums.last().expect("orders");
    let near = (rep.lhs.value - rhs).abs();
    // The OU flow is deterministic, so se = 0 and the Euler bias (1 - dt)^{2r/dt}
    // against e^{-2r} is the only error; allow twice its step-doubling estimate.
    let allow = 3.0 * se + 2.0 * rep.discretization_error + rep.rhs_quadrature_error;
    let rhs_exact = (rhs - exact).abs() <= rep.rhs_quadrature_error.max(1e-3 * exact);
    Ok((
        rhs_exact && gap_first >= -allow && near <= 1e-3 + allow,
        format!(
            "lhs {:.6}, rhs {rhs:.6} (quad err {:.1e}), exact {exact:.6}, lhs - first term {gap_first:.2e} (allowance {allow:.2e})",
            rep.lhs.value, rep.rhs_quadrature_error
        ),
    ))
}

// 14. determinism -------------------------------------------------------------

fn stochastic_fingerprint() -> msde_core::Result<Vec<u64>> {
    let mut bits = Vec::new();
    let spec = EnsembleSpec::new(brownian(2), vec![0.0, 0.0], 1.0, 0.01, 3000, 1414);
    let ens = spec.simulate(true)?;
    bits.extend(ens.states.iter().map(|v| v.to_bits()));
    let f = |_t: f64, x: &[f64]| x[0] * x[0] + x[1].abs();
    let occ = occupation_functional(&spec, &f, 2)?;
    bits.extend([occ.value.to_bits(), occ.std_error.to_bits()]);
    let other = spec.clone().with_seed(1415);
    let cal = calibrate_threshold(&spec, &other, &[0.5, 1.0], &TestFunctional::default_set(2), 50, 0.9, 1416)?;
    bits.extend([cal.threshold.to_bits(), cal.null_distance.to_bits()]);
    let one = EnsembleSpec::new(brownian(1), vec![0.0], 1.0, 1.0 / 32.0, 2000, 1417).simulate(true)?;
    let pm = project_mc(&one, &|x: &[f64]| x[0] * x[0], 1.0, 1, None)?;
    bits.extend([pm.residual.to_bits(), pm.std_error.to_bits()]);
    let suite = Suite::parse(msde_core::verify::DEFAULT_SUITE)?;
    let small = Suite { claims: suite.claims.into_iter().filter(|c| c.budget.paths.is_some_and(|p| p <= 4000)).collect(), ..suite };
    for row in run_suite(&small)?.rows {
        bits.extend([row.lhs, row.rhs, row.std_error].iter().map(|v| v.map_or(0, f64::to_bits)));
        bits.push(u64::from(row.pass));
    }
    Ok(bits)
}

fn criterion_14() -> Verdict {
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("pool");
    let a = pool(1).install(stochastic_fingerprint)?;
    let b = pool(4).install(stochastic_fingerprint)?;
    let c = pool(1).install(stochastic_fingerprint)?;
    Ok((a == b && a == c, format!("{} values compared at 1, 4 and 1 workers", a.len())))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(u8, &str, fn() -> Verdict); 14] = [
        (1, "chaos identity", criterion_1),
        (2, "Morrey estimator", criterion_2),
        (3, "split identity", criterion_3),
        (4, "VMO modulus", criterion_4),
        (5, "range projection", criterion_5),
        (6, "Girsanov weights", criterion_6),
        (7, "occupation estimate", criterion_7),
        (8, "scaling law", criterion_8),
        (9, "modulus of continuity", criterion_9),
        (10, "density", criterion_10),
        (11, "weak uniqueness evidence", criterion_11),
        (12, "mollification and truncation", criterion_12),
        (13, "gradient inequality", criterion_13),
        (14, "determinism", criterion_14),
    ];
    let only: Option<u8> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let started = Instant::now();
        let (pass, detail) = match run() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let verdict = if pass { "PASS" } else { "FAIL" };
        // written past the test harness capture so the lines always show
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "criterion {n:>2} {verdict} [{name}] {detail} ({:.1}s)", started.elapsed().as_secs_f64());
        let _ = out.flush();
        if !pass {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
