//! Run configuration: a TOML file merged with command-line flags.

use std::path::{Path, PathBuf};

use msde_core::mollify::Kernel;
use msde_core::spaces::{CertifyConfig, SamplerSpec, SplitSpec};
use msde_core::verify::{FieldRecipe, FieldSpec, MollifySpec};
use serde::Deserialize;

use crate::{Failure, FieldArgs};

/// Certification settings in a config file; flags override single entries.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyFile {
    pub theta: Option<f64>,
    pub b_hat_m: Option<f64>,
    pub r_a: Option<f64>,
    pub r_b: Option<f64>,
    pub p_b: Option<f64>,
    pub vmo_levels: Option<usize>,
    pub sampler: Option<SamplerSpec>,
    pub split: Option<SplitSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub field: Option<FieldRecipe>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub certify: CertifyFile,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("bad config {}: {e}", path.display())))
    }
}

fn needs_dim(kind: &str) -> bool {
    !matches!(kind, "constant" | "grid")
}

fn default_dim(kind: &str) -> i64 {
    if matches!(kind, "brownian" | "bm" | "zero" | "ornstein_uhlenbeck" | "ou") {
        1
    } else {
        2
    }
}

fn parse_kernel(s: &str) -> Result<Kernel, Failure> {
    match s.split_once(':') {
        None if s == "bump" => Ok(Kernel::Bump),
        Some(("poly" | "polynomial", k)) => k
            .parse()
            .map(|k| Kernel::Polynomial { k })
            .map_err(|_| Failure::Usage(format!("bad kernel order in {s:?}"))),
        _ => Err(Failure::Usage(format!("unknown kernel {s:?}; use bump or poly:K"))),
    }
}

/// Field from flags when `--field` is given, else from the config file.
pub fn field_recipe(args: &FieldArgs, cfg: &RunConfig) -> Result<Option<FieldRecipe>, Failure> {
    let mut recipe = match &args.field {
        None => cfg.field.clone(),
        Some(name) => {
            let kind = name.replace('-', "_");
            let mut t = toml::Table::new();
            t.insert("kind".into(), kind.clone().into());
            if needs_dim(&kind) {
                t.insert("d".into(), args.d.map_or(default_dim(&kind), |d| d as i64).into());
            }
            let mut put = |k: &str, v: Option<f64>| {
                if let Some(v) = v {
                    t.insert(k.into(), v.into());
                }
            };
            put("gamma", args.gamma);
            put("rate", args.rate);
            put("amplitude", args.amplitude);
            put("radius", args.radius);
            put("p", args.field_p);
            if let Some(n) = args.n_max {
                t.insert("n_max".into(), (n as i64).into());
            }
            if let Some(path) = &args.grid {
                t.insert("path".into(), path.display().to_string().into());
                let role = match args.noise_dim {
                    Some(k) => {
                        let mut r = toml::Table::new();
                        let mut inner = toml::Table::new();
                        inner.insert("noise_dim".into(), (k as i64).into());
                        r.insert("sigma".into(), inner.into());
                        toml::Value::Table(r)
                    }
                    None => "drift".into(),
                };
                t.insert("role".into(), role);
            }
            let field: FieldSpec = toml::Value::Table(t)
                .try_into()
                .map_err(|e| Failure::Usage(format!("bad field {name:?}: {e}")))?;
            Some(FieldRecipe::plain(field))
        }
    };
    if let (Some(r), Some(n)) = (recipe.as_mut(), args.mollify) {
        let kernel = match &args.kernel {
            Some(k) => parse_kernel(k)?,
            None => Kernel::Bump,
        };
        let nodes = args.mollify_nodes.unwrap_or(16);
        r.mollify = Some(MollifySpec { n, kernel, nodes_per_axis: nodes });
    }
    Ok(recipe)
}

pub fn certify_config(file: &CertifyFile, flags: &crate::CertifyArgs, dim: usize) -> CertifyConfig {
    let d = dim as f64;
    CertifyConfig {
        theta: flags.theta.or(file.theta).unwrap_or(0.5),
        b_hat_m: flags.bhat.or(file.b_hat_m).unwrap_or(1.0),
        r_a: flags.r_a.or(file.r_a).unwrap_or(0.5),
        r_b: flags.r_b.or(file.r_b).unwrap_or(0.5),
        p_b: flags.p_b.or(file.p_b).unwrap_or((0.75 * d).max(1.0).min(d)),
        sampler: file.sampler.clone().unwrap_or_default(),
        split: file.split.clone(),
        vmo_levels: file.vmo_levels.unwrap_or(3),
    }
}
