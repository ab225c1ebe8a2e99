//! Scenario recipes. Each one builds its inputs from the claim, runs the
//! estimators and returns both sides of the claimed relation.

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::recipe::{FieldRecipe, FieldSpec, MollifySpec};
use super::Decision;
use crate::chaos::{chaos_coefficients, gradient_bound_check, project_mc, range_projection, ChaosConfig};
use crate::error::{Error, Result};
use crate::fields::{self, CoefficientField};
use crate::mollify::{ellipticity_check, select_m, truncate_sigma, MollifiedFamily, MollifyConfig, Region};
use crate::quadrature::{unit_ball_volume, GaussLegendre};
use crate::rng::{mix_seed, UniformStream};
use crate::simulate::{
    calibrate_threshold, density_estimate, exit_time_functional, fdd_compare, girsanov_weights, lpq_norm,
    modulus_statistics, occupation_functional, time_integrated_norm, weight_convergence_check, Cylinder,
    EnsembleSpec, TestFunctional,
};
use crate::spaces::{certify_assumption, morrey_constant, split_drift, vmo_modulus, CertifyConfig, SamplerSpec, SplitConfig};
use crate::stats::linear_fit;

/// Budget overrides shared by all scenarios.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    /// PDE nodes per axis, or points per ball for the space estimators.
    pub nodes: Option<usize>,
    /// Work cap for the chaos recursion.
    pub max_work: Option<f64>,
}

/// Sequence checked by the trend rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub increasing: bool,
}

/// What a scenario hands back to the decision rule.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub lhs: f64,
    pub rhs: f64,
    pub std_error: f64,
    /// Numerical error the scenario itself can bound, added to the tolerance.
    pub slack: f64,
    /// `implied_constant = lhs / base`.
    pub base: Option<f64>,
    /// Side condition that must also hold.
    pub gate: bool,
    pub decision: Decision,
    pub series: Option<Series>,
    pub detail: serde_json::Value,
}

impl Outcome {
    fn new(lhs: f64, rhs: f64, decision: Decision) -> Self {
        Self { lhs, rhs, std_error: 0.0, slack: 0.0, base: None, gate: true, decision, series: None, detail: json!({}) }
    }

    fn se(mut self, se: f64) -> Self {
        self.std_error = se;
        self
    }

    fn slack(mut self, s: f64) -> Self {
        self.slack = s;
        self
    }

    fn base(mut self, b: f64) -> Self {
        self.base = Some(b);
        self
    }

    fn gate(mut self, g: bool) -> Self {
        self.gate = g;
        self
    }

    fn detail(mut self, d: serde_json::Value) -> Self {
        self.detail = d;
        self
    }
}

/// Inputs of one scenario run.
pub struct Ctx<'a> {
    pub field: Option<&'a FieldRecipe>,
    pub params: &'a toml::Table,
    pub budget: &'a Budget,
    pub seed: Option<u64>,
}

impl Ctx<'_> {
    fn params<P: DeserializeOwned>(&self) -> Result<P> {
        toml::Value::Table(self.params.clone())
            .try_into()
            .map_err(|e| Error::Scenario(format!("bad params: {e}")))
    }

    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Scenario("stochastic scenario needs a seed".into()))
    }

    fn field_or(&self, default: FieldSpec) -> Result<CoefficientField> {
        match self.field {
            Some(r) => r.build(),
            None => default.build(),
        }
    }

    fn paths(&self, default: usize) -> usize {
        self.budget.paths.unwrap_or(default)
    }

    fn dt(&self, default: f64) -> f64 {
        self.budget.dt.unwrap_or(default)
    }
}

/// Names accepted in the `scenario` key.
pub const SCENARIOS: &[&str] = &[
    "occupation",
    "exit_time",
    "modulus",
    "scaling",
    "girsanov_martingale",
    "weight_trend",
    "density_l1",
    "density_time_integral",
    "fdd",
    "chaos_residual",
    "chaos_project_mc",
    "range_projection",
    "gradient_bound",
    "morrey",
    "vmo",
    "split_quadrature",
    "mollify_contraction",
    "mollify_ellipticity",
    "select_m",
    "certify",
];

pub fn run(name: &str, ctx: &Ctx<'_>) -> Result<Outcome> {
    match name {
        "occupation" => occupation(ctx),
        "exit_time" => exit_time(ctx),
        "modulus" => modulus(ctx),
        "scaling" => scaling(ctx),
        "girsanov_martingale" => girsanov_martingale(ctx),
        "weight_trend" => weight_trend(ctx),
        "density_l1" => density_l1(ctx),
        "density_time_integral" => density_time_integral(ctx),
        "fdd" => fdd(ctx),
        "chaos_residual" => chaos_residual(ctx),
        "chaos_project_mc" => chaos_project(ctx),
        "range_projection" => range_proj(ctx),
        "gradient_bound" => gradient_bound(ctx),
        "morrey" => morrey(ctx),
        "vmo" => vmo(ctx),
        "split_quadrature" => split_quadrature(ctx),
        "mollify_contraction" => mollify_contraction(ctx),
        "mollify_ellipticity" => mollify_ellipticity(ctx),
        "select_m" => select_m_check(ctx),
        "certify" => certify(ctx),
        other => Err(Error::Scenario(format!("unknown scenario {other:?}"))),
    }
}

fn zeros(d: usize) -> Vec<f64> {
    vec![0.0; d]
}

fn start(x0: Option<Vec<f64>>, field: &CoefficientField) -> Result<Vec<f64>> {
    let x0 = x0.unwrap_or_else(|| zeros(field.dim()));
    if x0.len() != field.dim() {
        return Err(Error::Scenario("x0 has the wrong dimension".into()));
    }
    Ok(x0)
}

fn ensemble(ctx: &Ctx<'_>, field: CoefficientField, x0: Vec<f64>, horizon: f64, dt: f64, paths: usize) -> Result<EnsembleSpec> {
    let spec = EnsembleSpec::new(field, x0, horizon, dt, paths, ctx.seed()?);
    spec.steps()?;
    Ok(spec)
}

/// `int_0^1 P(|w_s| < rho) ds` for planar Brownian motion from the centre,
/// scaled to `[a, b]`.
fn planar_disk_occupation(a: f64, b: f64, rho: f64) -> f64 {
    let gl = GaussLegendre::new(32);
    let mut acc = 0.0;
    let panels = 64;
    let h = (b - a) / panels as f64;
    for k in 0..panels {
        let lo = a + k as f64 * h;
        acc += gl.integrate(lo, lo + h, |s| if s <= 0.0 { 1.0 } else { 1.0 - (-rho * rho / (2.0 * s)).exp() });
    }
    acc
}

// --- occupation -------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
enum TestFn {
    Zero,
    /// `1{a <= t < b, |x - centre| < radius}`
    Indicator {
        #[serde(default)]
        window: Option<(f64, f64)>,
        radius: f64,
        #[serde(default)]
        centre: Option<Vec<f64>>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OccupationParams {
    #[serde(default = "one")]
    horizon: f64,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    function: TestFn,
    #[serde(default = "one_u32")]
    m: u32,
    /// `brownian_disk`: planar heat-kernel oracle. `lpq`: report the implied
    /// constant against the mixed norm.
    #[serde(default)]
    oracle: Option<String>,
    #[serde(default = "default_pq")]
    p: f64,
    #[serde(default = "default_pq")]
    q: f64,
}

fn one() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

fn default_pq() -> f64 {
    4.0
}

fn occupation(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: OccupationParams = ctx.params()?;
    let field = ctx.field_or(FieldSpec::Brownian { d: 2 })?;
    let d = field.dim();
    let x0 = start(p.x0, &field)?;
    let (window, radius, centre) = match &p.function {
        TestFn::Zero => (None, 0.0, zeros(d)),
        TestFn::Indicator { window, radius, centre } => (Some(window.unwrap_or((0.0, p.horizon))), *radius, centre.clone().unwrap_or_else(|| zeros(d))),
    };
    if centre.len() != d {
        return Err(Error::Scenario("indicator centre has the wrong dimension".into()));
    }
    let f = |t: f64, x: &[f64]| -> f64 {
        match window {
            None => 0.0,
            Some((a, b)) => {
                let r2: f64 = x.iter().zip(&centre).map(|(u, v)| (u - v).powi(2)).sum();
                if t >= a && t < b && r2 < radius * radius {
                    1.0
                } else {
                    0.0
                }
            }
        }
    };
    let spec = ensemble(ctx, field, x0.clone(), p.horizon, ctx.dt(1e-2), ctx.paths(10_000))?;
    let est = occupation_functional(&spec, &f, p.m)?;
    let detail = json!({ "estimate": est });
    match (p.oracle.as_deref(), window) {
        (_, None) => Ok(Outcome::new(est.value, 0.0, Decision::TwoSided).se(est.std_error).detail(detail)),
        (Some("brownian_disk"), Some((a, b))) => {
            if d != 2 || p.m != 1 || x0 != centre {
                return Err(Error::Scenario("brownian_disk oracle needs d = 2, m = 1 and a centred start".into()));
            }
            let rhs = planar_disk_occupation(a.max(0.0), b.min(p.horizon), radius);
            Ok(Outcome::new(est.value, rhs, Decision::TwoSided).se(est.std_error).detail(detail))
        }
        (Some("lpq"), Some((a, b))) => {
            let space: Vec<(f64, f64)> = centre.iter().map(|c| (c - radius, c + radius)).collect();
            let norm = lpq_norm(&f, p.p, p.q, (a, b), &space, 64, 64usize.min(if d > 2 { 16 } else { 64 }))?;
            let base = norm.powi(p.m as i32);
            Ok(Outcome::new(est.value, base, Decision::Report).se(est.std_error).base(base).detail(detail))
        }
        (None, Some(_)) => Ok(Outcome::new(est.value, f64::NAN, Decision::Report).se(est.std_error).detail(detail)),
        (Some(o), _) => Err(Error::Scenario(format!("unknown occupation oracle {o:?}"))),
    }
}

// --- exit time --------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExitParams {
    #[serde(default = "half")]
    rho: f64,
}

fn half() -> f64 {
    0.5
}

/// `E int_0^{tau} 1 ds` reported against `rho^2`, the cylinder duration.
fn exit_time(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: ExitParams = ctx.params()?;
    let field = ctx.field_or(FieldSpec::Brownian { d: 2 })?;
    let x0 = zeros(field.dim());
    let cyl = Cylinder { t: 0.0, x: x0.clone(), rho: p.rho };
    let spec = ensemble(ctx, field, x0, p.rho * p.rho, ctx.dt(p.rho * p.rho / 200.0), ctx.paths(10_000))?;
    let est = exit_time_functional(&spec, &cyl, &|_, _| 1.0)?;
    let base = p.rho * p.rho;
    Ok(Outcome::new(est.value, base, Decision::UpperBound).se(est.std_error).base(base).detail(json!({ "estimate": est })))
}

// --- modulus ----------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModulusParams {
    #[serde(default = "two_u32")]
    n: u32,
    windows: Vec<f64>,
    #[serde(default = "one")]
    horizon: f64,
}

fn two_u32() -> u32 {
    2
}

/// Log-log slope of `E sup |dx|^n` against the window, compared with `n / 2`.
fn modulus(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: ModulusParams = ctx.params()?;
    let field = ctx.field_or(FieldSpec::Brownian { d: 1 })?;
    let x0 = zeros(field.dim());
    let spec = ensemble(ctx, field, x0, p.horizon, ctx.dt(1e-3), ctx.paths(2000))?;
    let rep = modulus_statistics(&spec, p.n, &p.windows)?;
    let rhs = p.n as f64 / 2.0;
    Ok(Outcome::new(rep.slope, rhs, Decision::TwoSided).detail(json!({ "report": rep })))
}

// --- scaling ----------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalingParams {
    #[serde(default = "default_pq")]
    p: f64,
    #[serde(default = "default_pq")]
    q: f64,
    horizons: Vec<f64>,
}

/// Occupation of `1{|x| < sqrt T}` on `[0, T]` divided by its mixed norm,
/// fitted against `T` on a log-log scale.
fn scaling(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: ScalingParams = ctx.params()?;
    let field = ctx.field_or(FieldSpec::Brownian { d: 2 })?;
    let d = field.dim() as f64;
    if p.horizons.len() < 2 {
        return Err(Error::Scenario("scaling needs at least two horizons".into()));
    }
    let seed = ctx.seed()?;
    let mut logs = (Vec::new(), Vec::new());
    let mut rows = Vec::new();
    for (k, &t) in p.horizons.iter().enumerate() {
        let rad = t.sqrt();
        let f = move |_s: f64, x: &[f64]| if x.iter().map(|v| v * v).sum::<f64>() < t { 1.0 } else { 0.0 };
        let spec = EnsembleSpec::new(field.clone(), zeros(field.dim()), t, t * ctx.dt(1e-3), ctx.paths(10_000), mix_seed(&[seed, k as u64]));
        let est = occupation_functional(&spec, &f, 1)?;
        let vol = unit_ball_volume(field.dim()) * rad.powf(d);
        let norm = (t * vol.powf(p.q / p.p)).powf(1.0 / p.q);
        logs.0.push(t.ln());
        logs.1.push((est.value / norm).ln());
        rows.push(json!({ "horizon": t, "estimate": est, "norm": norm }));
    }
    let (slope, _) = linear_fit(&logs.0, &logs.1);
    let rhs = 1.0 - 0.5 * (d / p.p + 2.0 / p.q);
    Ok(Outcome::new(slope, rhs, Decision::TwoSided).detail(json!({ "rows": rows })))
}

// --- Girsanov ---------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GirsanovParams {
    /// Constant bounded drift part.
    drift: Vec<f64>,
    #[serde(default)]
    threshold: f64,
    #[serde(default = "one")]
    horizon: f64,
}

/// Mean Girsanov weight against 1. A zero drift must give weights exactly 1.
fn girsanov_martingale(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: GirsanovParams = ctx.params()?;
    let d = p.drift.len();
    let sigma = ctx.field_or(FieldSpec::Brownian { d })?;
    let b_b = fields::constant_field(DMatrix::identity(d, d), p.drift.clone())?;
    let spec = ensemble(ctx, sigma.clone(), zeros(d), p.horizon, ctx.dt(1e-2), ctx.paths(10_000))?;
    let w = girsanov_weights(&spec, &sigma, &b_b, p.threshold)?;
    let mean = w.mean_weight();
    let max_dev = w.weight.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let zero = p.drift.iter().all(|v| *v == 0.0);
    Ok(Outcome::new(mean.value, 1.0, Decision::TwoSided)
        .se(mean.std_error)
        .gate(!zero || max_dev == 0.0)
        .detail(json!({ "mean_weight": mean, "max_deviation": max_dev })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightTrendParams {
    thresholds: Vec<f64>,
    #[serde(default = "one")]
    horizon: f64,
}

/// `E sup |exp psi_n - 1|` must not increase with the cutoff `n`. The claim
/// field supplies `b_B`; paths are driven by `sigma = I`.
fn weight_trend(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: WeightTrendParams = ctx.params()?;
    let b_b = ctx.field_or(FieldSpec::SmoothBump { amplitude: 2.0, radius: 1.0, d: 2 })?;
    let d = b_b.dim();
    let sigma = fields::brownian(d);
    let spec = ensemble(ctx, sigma.clone(), zeros(d), p.horizon, ctx.dt(1e-2), ctx.paths(5000))?;
    let rep = weight_convergence_check(&spec, &sigma, &b_b, &p.thresholds, None)?;
    let mut out = Outcome::new(rep.monotone_violation, 0.0, Decision::Trend);
    out.series = Some(Series {
        values: rep.estimates.iter().map(|e| e.value).collect(),
        std_errors: rep.estimates.iter().map(|e| e.std_error).collect(),
        increasing: false,
    });
    Ok(out.detail(json!({ "report": rep })))
}

// --- density ----------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityParams {
    #[serde(default = "one")]
    horizon: f64,
    #[serde(default)]
    bins: Option<usize>,
}

fn gaussian_pdf(x: &[f64], var: f64) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (-r2 / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).powf(x.len() as f64 / 2.0)
}

/// L1 distance of the kernel density estimate of Brownian `x_T` to the
/// Gaussian density.
fn density_l1(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: DensityParams = ctx.params()?;
    let d = match ctx.field.map(|r| &r.field) {
        None => 1,
        Some(FieldSpec::Brownian { d }) => *d,
        Some(_) => return Err(Error::Scenario("density_l1 compares against Brownian motion only".into())),
    };
    let spec = ensemble(ctx, fields::brownian(d), zeros(d), p.horizon, ctx.dt(p.horizon / 10.0), ctx.paths(10_000))?;
    let rep = density_estimate(&spec, p.horizon, None, 1.0, p.bins)?;
    let l1 = rep.l1_distance(|x| gaussian_pdf(x, p.horizon));
    Ok(Outcome::new(l1, 0.0, Decision::UpperBound).detail(json!({ "bandwidth": rep.bandwidth, "mass": rep.mass })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeIntegralParams {
    times: Vec<f64>,
    p_prime: f64,
    q_prime: f64,
    #[serde(default)]
    bins: Option<usize>,
}

/// `int_0^T ||p_t||_{p'}^{q'} dt` from KDE slices, against the heat kernel.
fn density_time_integral(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: TimeIntegralParams = ctx.params()?;
    let d = match ctx.field.map(|r| &r.field) {
        None => 2,
        Some(FieldSpec::Brownian { d }) => *d,
        Some(_) => return Err(Error::Scenario("density_time_integral compares against Brownian motion only".into())),
    };
    let horizon = p.times.iter().copied().fold(0.0, f64::max);
    let dt = ctx.dt(p.times.iter().copied().fold(f64::INFINITY, f64::min));
    let spec = ensemble(ctx, fields::brownian(d), zeros(d), horizon, dt, ctx.paths(10_000))?;
    let rep = time_integrated_norm(&spec, &p.times, p.p_prime, p.q_prime, p.bins)?;
    // ||p_t||_{p'} = c t^{-beta / q'}
    let df = d as f64;
    let pp = p.p_prime;
    let c = (2.0 * std::f64::consts::PI).powf(-df / 2.0 + df / (2.0 * pp)) * pp.powf(-df / (2.0 * pp));
    let beta = p.q_prime * df / 2.0 * (1.0 - 1.0 / pp);
    if beta >= 1.0 {
        return Err(Error::Scenario("time integral diverges for these exponents".into()));
    }
    let rhs = c.powf(p.q_prime) * horizon.powf(1.0 - beta) / (1.0 - beta);
    Ok(Outcome::new(rep.integral, rhs, Decision::TwoSided).gate(rep.finite).detail(json!({ "report": rep })))
}

// --- fdd --------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FddParams {
    kernels: (MollifySpec, MollifySpec),
    times: Vec<f64>,
    #[serde(default = "default_splits")]
    splits: usize,
    #[serde(default = "default_level")]
    level: f64,
}

fn default_splits() -> usize {
    200
}

fn default_level() -> f64 {
    0.99
}

/// KS distances between two mollifications of the claim field, against a
/// threshold calibrated on two independent runs of the first one.
fn fdd(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: FddParams = ctx.params()?;
    let base = match ctx.field {
        Some(r) if r.mollify.is_none() => r.clone(),
        Some(_) => return Err(Error::Scenario("fdd mollifies the field itself; drop the mollify table".into())),
        None => FieldRecipe::plain(FieldSpec::Parabolic { gamma: 0.1, d: 2, direction: Default::default() }),
    };
    let build = |m: &MollifySpec| FieldRecipe { mollify: Some(m.clone()), ..base.clone() }.build();
    let fa = build(&p.kernels.0)?;
    let fb = build(&p.kernels.1)?;
    let d = fa.dim();
    let horizon = p.times.iter().copied().fold(0.0, f64::max);
    let seed = ctx.seed()?;
    let (dt, paths) = (ctx.dt(1e-2), ctx.paths(10_000));
    let a = EnsembleSpec::new(fa.clone(), zeros(d), horizon, dt, paths, mix_seed(&[seed, 1]));
    let a2 = a.clone().with_seed(mix_seed(&[seed, 2]));
    let b = EnsembleSpec::new(fb, zeros(d), horizon, dt, paths, mix_seed(&[seed, 3]));
    let (a, a2, b) = (a.simulate(false)?, a2.simulate(false)?, b.simulate(false)?);
    let funcs = TestFunctional::default_set(d);
    let cal = calibrate_threshold(&a, &a2, &p.times, &funcs, p.splits, p.level, mix_seed(&[seed, 4]))?;
    let rep = fdd_compare(&a, &b, &p.times, &funcs, cal.threshold)?;
    Ok(Outcome::new(rep.max_distance, cal.threshold, Decision::UpperBound)
        .gate(cal.null_pass && rep.pass)
        .detail(json!({ "calibration": cal, "comparison": rep })))
}

// --- chaos ------------------------------------------------------------------

/// Closed-form chaos cases: field, test function, and the exact residual
/// energy `E (f(x_r) - sum_{m <= n} I_m)^2` from `x = 0`, `t = 0`, `r = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChaosCase {
    BrownianX2,
    BrownianX,
    OuX,
}

impl ChaosCase {
    pub fn field(self) -> CoefficientField {
        match self {
            Self::BrownianX2 | Self::BrownianX => fields::brownian(1),
            Self::OuX => fields::ornstein_uhlenbeck(1, 1.0),
        }
    }

    pub fn function(self) -> fn(&[f64]) -> f64 {
        match self {
            Self::BrownianX2 => |x| x[0] * x[0],
            Self::BrownianX | Self::OuX => |x| x[0],
        }
    }

    pub fn residual(self, n: usize) -> f64 {
        match (self, n) {
            (Self::BrownianX2, 0 | 1) => 2.0,
            (Self::BrownianX, 0) => 1.0,
            (Self::OuX, 0) => (1.0 - (-2.0f64).exp()) / 2.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChaosParams {
    case: ChaosCase,
    order: usize,
    #[serde(default)]
    cells: Option<usize>,
}

fn chaos_config(ctx: &Ctx<'_>) -> ChaosConfig {
    let mut cfg = ChaosConfig::default();
    cfg.pde.nodes_per_axis = ctx.budget.nodes.or(cfg.pde.nodes_per_axis);
    if let Some(w) = ctx.budget.max_work {
        cfg.max_work = w;
    }
    cfg
}

fn chaos_residual(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: ChaosParams = ctx.params()?;
    let f = p.case.function();
    let exp = chaos_coefficients(&p.case.field(), &f, 0.0, 1.0, &[0.0], p.order, &chaos_config(ctx))?;
    let lhs = exp.residual_energy(p.order)?;
    let err = exp.residual_quadrature_error(p.order)?;
    Ok(Outcome::new(lhs, p.case.residual(p.order), Decision::TwoSided)
        .slack(err)
        .detail(json!({ "value": exp.value, "quadrature_error": err })))
}

fn chaos_project(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: ChaosParams = ctx.params()?;
    let f = p.case.function();
    let spec = ensemble(ctx, p.case.field(), vec![0.0], 1.0, ctx.dt(1.0 / 64.0), ctx.paths(20_000))?;
    let ens = spec.simulate(true)?;
    let rep = project_mc(&ens, &f, 1.0, p.order, p.cells)?;
    Ok(Outcome::new(rep.residual, p.case.residual(p.order), Decision::TwoSided)
        .se(rep.std_error)
        .detail(json!({ "report": rep })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RangeParams {
    #[serde(default = "default_count")]
    count: usize,
    #[serde(default = "default_max_dim")]
    max_dim: usize,
}

fn default_count() -> usize {
    200
}

fn default_max_dim() -> usize {
    5
}

/// Random `sigma` of every shape, a third of them rank deficient. Reports
/// the worst identity defect.
pub fn random_sigma(rng: &mut UniformStream, max_dim: usize) -> DMatrix<f64> {
    let pick = |rng: &mut UniformStream| 1 + ((rng.open01() * max_dim as f64) as usize).min(max_dim - 1);
    let d = pick(rng);
    let d1 = pick(rng);
    let full = DMatrix::from_fn(d, d1, |_, _| rng.normal());
    if rng.open01() < 1.0 / 3.0 && d.min(d1) > 1 {
        let k = 1 + ((rng.open01() * (d.min(d1) - 1) as f64) as usize).min(d.min(d1) - 2);
        let left = DMatrix::from_fn(d, k, |_, _| rng.normal());
        let right = DMatrix::from_fn(k, d1, |_, _| rng.normal());
        left * right
    } else {
        full
    }
}

fn range_proj(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: RangeParams = ctx.params()?;
    if p.max_dim == 0 {
        return Err(Error::Scenario("max_dim must be positive".into()));
    }
    let mut rng = UniformStream::new(ctx.seed()?, 0x9a);
    let mut worst: f64 = 0.0;
    let mut deficient = 0;
    for _ in 0..p.count {
        let s = random_sigma(&mut rng, p.max_dim);
        let rp = range_projection(&s);
        if rp.rank < s.nrows().min(s.ncols()) {
            deficient += 1;
        }
        worst = rp.identity_defects().into_iter().fold(worst, f64::max);
    }
    Ok(Outcome::new(worst, 0.0, Decision::UpperBound).detail(json!({ "count": p.count, "rank_deficient": deficient })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradientParams {
    #[serde(default = "one")]
    rate: f64,
    #[serde(default = "one")]
    eta: f64,
    #[serde(default)]
    x: f64,
    #[serde(default = "one")]
    r: f64,
    #[serde(default = "one_usize")]
    order: usize,
}

fn one_usize() -> usize {
    1
}

/// Gradient inequality for the OU flow with linear `f`: both sides equal
/// `eta^2 exp(-2 rate r)`.
fn gradient_bound(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: GradientParams = ctx.params()?;
    let field = fields::ornstein_uhlenbeck(1, p.rate);
    let spec = ensemble(ctx, field.clone(), vec![p.x], p.r, ctx.dt(1e-3), ctx.paths(2000))?;
    let ens = spec.simulate(true)?;
    let f = |x: &[f64]| x[0];
    let rep = gradient_bound_check(&field, &f, 0.0, p.r, &[p.x], &[p.eta], &ens, p.order, &chaos_config(ctx))?;
    let rhs = *rep.partial_sums.last().unwrap_or(&rep.first_term);
    let slack = rep.tolerance - 3.0 * rep.lhs.std_error;
    Ok(Outcome::new(rep.lhs.value, rhs, Decision::LowerBound)
        .se(rep.lhs.std_error)
        .slack(slack.max(0.0))
        .detail(json!({ "report": rep })))
}

// --- space estimators -------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MorreyParams {
    p: f64,
    r_max: f64,
    #[serde(default)]
    sampler: Option<SamplerSpec>,
    /// `inverse_radial` or `constant`.
    #[serde(default)]
    oracle: Option<String>,
}

fn sampler(ctx: &Ctx<'_>, s: Option<SamplerSpec>) -> Result<SamplerSpec> {
    let mut s = s.unwrap_or_default();
    if let Some(n) = ctx.budget.nodes {
        s.points_per_ball = n;
    }
    if let Some(seed) = ctx.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn morrey(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: MorreyParams = ctx.params()?;
    let recipe = ctx.field.ok_or_else(|| Error::Scenario("morrey needs a field".into()))?;
    let field = recipe.build()?;
    let s = sampler(ctx, p.sampler)?;
    let cert = morrey_constant(&field, p.p, p.r_max, &s)?;
    let rhs = match (p.oracle.as_deref(), &recipe.field) {
        (None, _) => None,
        // rho (avg_{B_rho} (gamma / |x|)^p)^{1/p} = gamma (d / (d - p))^{1/p}
        (Some("inverse_radial"), FieldSpec::Inverse { gamma, d, .. }) => {
            let d = *d as f64;
            if p.p >= d {
                return Err(Error::Scenario("inverse oracle needs p < d".into()));
            }
            Some(gamma * (d / (d - p.p)).powf(1.0 / p.p))
        }
        (Some("constant"), FieldSpec::Constant { drift, .. }) => Some(p.r_max * drift.iter().map(|v| v * v).sum::<f64>().sqrt()),
        (Some(o), _) => return Err(Error::Scenario(format!("oracle {o:?} does not apply to this field"))),
    };
    let detail = json!({ "certificate": cert });
    Ok(match rhs {
        Some(rhs) => Outcome::new(cert.constant, rhs, Decision::TwoSided).slack(cert.quadrature_error * cert.constant).detail(detail),
        None => Outcome::new(cert.constant, f64::NAN, Decision::Report).detail(detail),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VmoParams {
    rho: f64,
    #[serde(default)]
    sampler: Option<SamplerSpec>,
    /// Compare with a run using this many times the points per ball.
    #[serde(default)]
    reference_factor: Option<usize>,
}

fn vmo(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: VmoParams = ctx.params()?;
    let field = ctx.field_or(FieldSpec::SigmaVmo { radius: 0.5, amplitude: 1.0, d: 2 })?;
    let s = sampler(ctx, p.sampler)?;
    let cert = vmo_modulus(&field, p.rho, &s)?;
    match p.reference_factor {
        None => Ok(Outcome::new(cert.constant, 0.0, Decision::UpperBound).detail(json!({ "certificate": cert }))),
        Some(k) => {
            let fine = SamplerSpec { points_per_ball: s.points_per_ball * k.max(1), ..s };
            let oracle = vmo_modulus(&field, p.rho, &fine)?;
            Ok(Outcome::new(cert.constant, oracle.constant, Decision::TwoSided).detail(json!({ "certificate": cert, "reference": oracle })))
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitParams {
    p: f64,
    #[serde(default = "one")]
    n_hat: f64,
    #[serde(default = "unit_horizon")]
    horizon: (f64, f64),
    #[serde(default)]
    config: SplitConfig,
}

fn unit_horizon() -> (f64, f64) {
    (0.0, 1.0)
}

/// Two independent quadratures of the split identity.
fn split_quadrature(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: SplitParams = ctx.params()?;
    let field = ctx.field_or(FieldSpec::SmoothBump { amplitude: 1.0, radius: 1.0, d: 2 })?;
    let s = split_drift(&field, p.p, p.n_hat, p.horizon, &p.config)?;
    Ok(Outcome::new(s.lambda_sq_integral, s.rhs_integral, Decision::TwoSided).detail(json!({
        "lambda_sq_integral": s.lambda_sq_integral,
        "rhs_integral": s.rhs_integral,
        "b_b_norm": s.b_b_norm,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContractionParams {
    n: u32,
    p: f64,
    r_max: f64,
    #[serde(default)]
    mollify: MollifyConfig,
    #[serde(default)]
    sampler: Option<SamplerSpec>,
}

/// Morrey constant of the mollified drift against that of the original.
fn mollify_contraction(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: ContractionParams = ctx.params()?;
    let field = ctx.field_or(FieldSpec::SmoothBump { amplitude: 1.0, radius: 1.0, d: 2 })?;
    let smooth = crate::mollify::mollify(&field, p.n, &p.mollify)?;
    let s = sampler(ctx, p.sampler)?;
    let before = morrey_constant(&field, p.p, p.r_max, &s)?;
    let after = morrey_constant(&smooth, p.p, p.r_max, &s)?;
    let slack = before.quadrature_error * before.constant + after.quadrature_error * after.constant;
    Ok(Outcome::new(after.constant, before.constant, Decision::UpperBound)
        .slack(slack)
        .detail(json!({ "base": before, "mollified": after })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EllipticityParams {
    n: u32,
    /// Defaults to the largest admissible level.
    #[serde(default)]
    m: Option<i64>,
    #[serde(default = "one")]
    n_d: f64,
    region: Region,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default)]
    mollify: MollifyConfig,
}

fn default_samples() -> usize {
    2000
}

/// Eigenvalues of the truncated mollified diffusion stay in
/// `[delta / 4, 4 / delta]`.
fn mollify_ellipticity(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: EllipticityParams = ctx.params()?;
    let field = ctx.field_or(FieldSpec::SigmaVmo { radius: 0.5, amplitude: 1.0, d: 2 })?;
    let m = match p.m {
        Some(m) => m,
        None => select_m(p.n as u64, field.delta(), p.n_d)? as i64,
    };
    let fam = MollifiedFamily::new(&field, p.n, m, &p.mollify)?;
    let (g, set) = truncate_sigma(&fam)?;
    let rep = ellipticity_check(&g, &p.region, p.samples, ctx.seed()?)?;
    Ok(Outcome::new(rep.min, rep.lower, Decision::LowerBound)
        .gate(rep.pass)
        .detail(json!({ "report": rep, "m": m, "gamma_set": set })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectParams {
    n: Vec<u64>,
    delta: Vec<f64>,
    #[serde(default = "unit_list")]
    n_d: Vec<f64>,
}

fn unit_list() -> Vec<f64> {
    vec![1.0]
}

/// Counts `(n, delta, N_d)` where `select_m` is not the largest admissible
/// level.
fn select_m_check(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: SelectParams = ctx.params()?;
    let mut violations = 0usize;
    let mut checked = 0usize;
    for &n in &p.n {
        for &delta in &p.delta {
            for &nd in &p.n_d {
                let m = select_m(n, delta, nd)?;
                let bound = delta.sqrt() / 4.0;
                let ok = |m: u64| nd * m as f64 / n as f64 <= bound;
                if !ok(m) || ok(m + 1) {
                    violations += 1;
                }
                checked += 1;
            }
        }
    }
    Ok(Outcome::new(violations as f64, 0.0, Decision::UpperBound).detail(json!({ "checked": checked })))
}

/// Runs the three-clause certification; the row counts failed clauses.
fn certify(ctx: &Ctx<'_>) -> Result<Outcome> {
    let mut cfg: CertifyConfig = ctx.params()?;
    let field = ctx.field_or(FieldSpec::Brownian { d: 2 })?;
    if let Some(seed) = ctx.seed {
        cfg.sampler.seed = seed;
    }
    if let Some(n) = ctx.budget.nodes {
        cfg.sampler.points_per_ball = n;
    }
    let rep = certify_assumption(&field, &cfg)?;
    let failed = rep.clauses.iter().filter(|c| !c.pass).count();
    Ok(Outcome::new(failed as f64, 0.0, Decision::UpperBound).gate(rep.pass).detail(json!({ "report": rep })))
}
