//! `msde`: command-line front end for the msde-core toolkit.
//!
//! Exit codes: 0 success, 1 a checked claim failed, 2 usage error,
//! 3 runtime error.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msde_core::chaos::{chaos_coefficients, project_mc, ChaosConfig};
use msde_core::io::write_atomic;
use msde_core::simulate::{
    density_estimate, exit_time_functional, load_ensemble, modulus_statistics, occupation_functional, save_ensemble,
    write_functional_rows, Cylinder, EnsembleSpec, FunctionalRow, PathEnsemble,
};
use msde_core::spaces::{certify_assumption, split_drift, SplitConfig};
use msde_core::verify::{run_suite, ChaosCase, FieldRecipe, Suite, VerificationReport};
use msde_core::Error;
use serde_json::json;

use config::RunConfig;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Suite(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "msde", version, about = "Numerics for Ito equations with VMO diffusion and Morrey drift")]
struct Cli {
    /// TOML run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw. Required by stochastic commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct FieldArgs {
    /// Zoo field: bm, zero, ou, constant, sigma-vmo, inverse, parabolic,
    /// fractal, counterexample, smooth-bump, grid.
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Integrability exponent of the fractal drift.
    #[arg(long = "field-p")]
    pub field_p: Option<f64>,
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Grid file for `--field grid`.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Read the grid as sigma with this many noise columns.
    #[arg(long)]
    pub noise_dim: Option<usize>,
    /// Mollify at level n.
    #[arg(long)]
    pub mollify: Option<u32>,
    /// bump or poly:K
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub mollify_nodes: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    /// Number of paths.
    #[arg(long = "M", alias = "paths")]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Horizon.
    #[arg(long = "T", alias = "horizon")]
    horizon: Option<f64>,
    /// Start point, comma separated.
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    /// Cap on |b| for singular drifts; `auto` uses 1/sqrt(dt).
    #[arg(long)]
    drift_cap: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct CertifyArgs {
    #[arg(long)]
    theta: Option<f64>,
    /// Threshold for the Morrey constant of b_M.
    #[arg(long)]
    bhat: Option<f64>,
    #[arg(long)]
    r_a: Option<f64>,
    #[arg(long)]
    r_b: Option<f64>,
    #[arg(long)]
    p_b: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the standing assumption on a field; writes certificate.json.
    Certify {
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        thresholds: CertifyArgs,
    },
    /// Split the drift at the level lambda(t); writes split.json.
    Split {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 1.0)]
        n_hat: f64,
        #[arg(long = "T", default_value_t = 1.0)]
        horizon: f64,
    },
    /// Simulate an ensemble; writes paths.msde and summary.json.
    Simulate {
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Path functionals from a stored or freshly simulated ensemble.
    Estimate {
        #[arg(value_enum)]
        what: Estimate,
        /// Stored ensemble; otherwise simulate from the field flags.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Radius of the ball or cylinder.
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        /// Moment order.
        #[arg(long, default_value_t = 1)]
        m: u32,
        /// Windows for the modulus, comma separated.
        #[arg(long, value_delimiter = ',')]
        windows: Option<Vec<f64>>,
    },
    /// Wiener chaos computations.
    Chaos {
        #[command(subcommand)]
        what: ChaosCmd,
    },
    /// Run a suite of claims; writes report.json and report.txt.
    Verify {
        #[arg(long, default_value = "default.suite")]
        suite: PathBuf,
    },
    /// Print a stored verification report.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Estimate {
    /// E (int_0^T 1{|x_s - x_0| < rho} ds)^m
    Occupation,
    /// Slope of E sup |dx|^m over windows.
    Modulus,
    /// Density of x_T.
    Density,
    /// Expected time in the cylinder of radius rho.
    ExitTime,
}

#[derive(Subcommand, Debug)]
enum ChaosCmd {
    /// Residual energy after the first `order` chaoses.
    Residual {
        #[arg(long, value_enum)]
        case: CaseArg,
        #[arg(long)]
        order: usize,
        /// PDE nodes per axis.
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Monte Carlo regression residual of the same quantity.
    Project {
        #[arg(long, value_enum)]
        case: CaseArg,
        #[arg(long)]
        order: usize,
        #[arg(long = "M", default_value_t = 20_000)]
        paths: usize,
        #[arg(long, default_value_t = 1.0 / 64.0)]
        dt: f64,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum CaseArg {
    BrownianX2,
    BrownianX,
    OuX,
}

impl From<CaseArg> for ChaosCase {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::BrownianX2 => ChaosCase::BrownianX2,
            CaseArg::BrownianX => ChaosCase::BrownianX,
            CaseArg::OuX => ChaosCase::OuX,
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    seed: Option<u64>,
    out: PathBuf,
}

impl Ctx {
    fn seed(&self) -> Result<u64, Failure> {
        self.seed.ok_or_else(|| Failure::Usage("this command is stochastic and needs --seed".into()))
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        let path = self.out.join(name);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    fn write_json(&self, name: &str, value: &impl serde::Serialize) -> Result<PathBuf, Failure> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn field(&self, args: &FieldArgs) -> Result<FieldRecipe, Failure> {
        config::field_recipe(args, &self.cfg)?.ok_or_else(|| Failure::Usage("no field given (use --field or a config file)".into()))
    }

    fn spec(&self, field: &FieldArgs, sim: &SimArgs) -> Result<EnsembleSpec, Failure> {
        let seed = self.seed()?;
        let f = self.field(field)?.build()?;
        let dt = sim.dt.or(self.cfg.dt).unwrap_or(1e-2);
        let horizon = sim.horizon.or(self.cfg.horizon).unwrap_or(1.0);
        let paths = sim.paths.or(self.cfg.paths).unwrap_or(1000);
        let x0 = sim.x0.clone().or_else(|| self.cfg.x0.clone()).unwrap_or_else(|| vec![0.0; f.dim()]);
        if x0.len() != f.dim() {
            return Err(Failure::Usage(format!("x0 has {} entries, field has dimension {}", x0.len(), f.dim())));
        }
        let cap = match sim.drift_cap.as_deref() {
            None => None,
            Some("auto") => Some(msde_core::simulate::default_drift_cap(dt)),
            Some(v) => Some(v.parse::<f64>().map_err(|_| Failure::Usage(format!("bad drift cap {v:?}")))?),
        };
        let spec = EnsembleSpec::new(f, x0, horizon, dt, paths, seed).with_drift_cap(cap);
        spec.steps()?;
        Ok(spec)
    }
}

fn summary(ens: &PathEnsemble) -> serde_json::Value {
    let last = ens.states_at(ens.steps);
    let d = ens.dim;
    let n = ens.paths as f64;
    let mean: Vec<f64> = (0..d).map(|j| last.iter().skip(j).step_by(d).sum::<f64>() / n).collect();
    let var: Vec<f64> = (0..d)
        .map(|j| last.iter().skip(j).step_by(d).map(|v| (v - mean[j]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0))
        .collect();
    json!({
        "paths": ens.paths, "steps": ens.steps, "dt": ens.dt, "dim": d, "seed": ens.seed,
        "terminal_mean": mean, "terminal_variance": var,
    })
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let workers = cli.workers.or(cfg.workers);
    if let Some(w) = workers {
        if w == 0 {
            return Err(Failure::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let ctx = Ctx {
        seed: cli.seed.or(cfg.seed),
        out: cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("msde-out")),
        cfg,
    };
    match cli.command {
        Command::Certify { field, thresholds } => {
            let f = ctx.field(&field)?.build()?;
            let mut cc = config::certify_config(&ctx.cfg.certify, &thresholds, f.dim());
            if let Some(s) = ctx.seed {
                cc.sampler.seed = s;
            }
            let rep = certify_assumption(&f, &cc)?;
            for c in &rep.clauses {
                let th = c.threshold.map_or_else(|| "-".into(), |t| format!("{t:.4e}"));
                println!("{:<22} {:>12.6e}  threshold {:>11}  {}", c.quantity, c.value, th, if c.pass { "PASS" } else { "FAIL" });
            }
            ctx.write_json("certificate.json", &rep)?;
            Ok(if rep.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Split { field, p, n_hat, horizon } => {
            let f = ctx.field(&field)?.build()?;
            let s = split_drift(&f, p, n_hat, (0.0, horizon), &SplitConfig::default())?;
            let out = json!({
                "p": s.p, "n_hat": s.n_hat, "horizon": s.horizon,
                "lambda": s.lambda, "b_tilde": s.b_tilde, "b_b_norm": s.b_b_norm,
                "lambda_sq_integral": s.lambda_sq_integral, "rhs_integral": s.rhs_integral,
                "relative_gap": s.relative_gap(),
            });
            println!("int lambda^2 = {:.6e}, N^2 int (int |b|^p)^(q/p) = {:.6e}, gap {:.3e}", s.lambda_sq_integral, s.rhs_integral, s.relative_gap());
            ctx.write_json("split.json", &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { field, sim } => {
            let ens = ctx.spec(&field, &sim)?.simulate(true)?;
            let path = ctx.out.join("paths.msde");
            save_ensemble(&path, &ens)?;
            let s = summary(&ens);
            ctx.write_json("summary.json", &s)?;
            println!("{}", serde_json::to_string(&s)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Estimate { what, input, field, sim, rho, m, windows } => {
            let ens = match &input {
                Some(p) => load_ensemble(p)?,
                None => ctx.spec(&field, &sim)?.simulate(false)?,
            };
            let row = estimate(&ens, what, rho, m, windows.as_deref())?;
            println!("{} = {:.6e} (se {:.2e})", row.claim, row.lhs, row.std_error);
            write_functional_rows(&ctx.out.join("estimate.json"), std::slice::from_ref(&row))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Chaos { what } => chaos(&ctx, what),
        Command::Verify { suite } => {
            let s = Suite::load(&suite)?;
            let s = Suite { seed: ctx.seed.or(s.seed), ..s };
            let report = run_suite(&s)?;
            print!("{}", report.to_table());
            ctx.write("report.json", report.to_json()?.as_bytes())?;
            ctx.write("report.txt", report.to_table().as_bytes())?;
            Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Report { input } => {
            let text = std::fs::read_to_string(&input)?;
            let report: VerificationReport =
                serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{} is not a report: {e}", input.display())))?;
            print!("{}", report.to_table());
            Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn estimate(ens: &PathEnsemble, what: Estimate, rho: f64, m: u32, windows: Option<&[f64]>) -> Result<FunctionalRow, Failure> {
    let x0 = ens.x0.clone();
    let horizon = ens.horizon();
    // no claim is checked here; the bound column carries the upper 95% confidence limit
    let row = |claim: String, lhs: f64, se: f64| FunctionalRow { claim, lhs, rhs_bound: lhs + 1.959_963_984_540_054 * se, std_error: se, pass: true };
    Ok(match what {
        Estimate::Occupation => {
            let f = |_t: f64, x: &[f64]| {
                let r2: f64 = x.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum();
                f64::from(u8::from(r2 < rho * rho))
            };
            let e = occupation_functional(ens, &f, m)?;
            row(format!("occupation(rho={rho}, m={m})"), e.value, e.std_error)
        }
        Estimate::ExitTime => {
            let cyl = Cylinder { t: ens.t0, x: x0, rho };
            let e = exit_time_functional(ens, &cyl, &|_, _| 1.0)?;
            row(format!("exit_time(rho={rho})"), e.value, e.std_error)
        }
        Estimate::Modulus => {
            let w: Vec<f64> = match windows {
                Some(w) => w.to_vec(),
                None => (0..4).map(|k| horizon * 0.25f64.powi(k)).collect(),
            };
            let r = modulus_statistics(ens, m.max(1), &w)?;
            row(format!("modulus_slope(n={})", m.max(1)), r.slope, 0.0)
        }
        Estimate::Density => {
            let r = density_estimate(ens, ens.t0 + horizon, None, 1.0, None)?;
            row("density_mass".into(), r.mass, 0.0)
        }
    })
}

fn chaos(ctx: &Ctx, what: ChaosCmd) -> Result<ExitCode, Failure> {
    match what {
        ChaosCmd::Residual { case, order, nodes } => {
            let case = ChaosCase::from(case);
            let mut cfg = ChaosConfig::default();
            cfg.pde.nodes_per_axis = nodes.or(cfg.pde.nodes_per_axis);
            let f = case.function();
            let exp = chaos_coefficients(&case.field(), &f, 0.0, 1.0, &[0.0], order, &cfg)?;
            let v = exp.residual_energy(order)?;
            let err = exp.residual_quadrature_error(order)?;
            println!("{v:.6} ± {err:.1e}");
            ctx.write_json("chaos.json", &json!({ "case": case, "order": order, "residual": v, "quadrature_error": err, "exact": case.residual(order) }))?;
        }
        ChaosCmd::Project { case, order, paths, dt } => {
            let case = ChaosCase::from(case);
            let ens = EnsembleSpec::new(case.field(), vec![0.0], 1.0, dt, paths, ctx.seed()?).simulate(true)?;
            let f = case.function();
            let rep = project_mc(&ens, &f, 1.0, order, None)?;
            println!("{:.6} ± {:.1e}", rep.residual, rep.std_error);
            ctx.write_json("chaos.json", &rep)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
