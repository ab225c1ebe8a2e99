//! Claim-by-claim verification. A suite file lists claims; each claim names
//! a scenario, its parameters, a budget, a seed and a decision rule. Claims
//! run in parallel and every claim yields exactly one report row.
//!
//! Suite files are TOML:
//!
//! ```toml
//! name = "example"
//! seed = 7
//!
//! [[claim]]
//! id = "brownian-x2-order-1"
//! scenario = "chaos_residual"
//! decision = "two_sided"
//! tolerance = 1e-3
//! params = { case = "brownian-x2", order = 1 }
//! ```

mod recipe;
mod scenarios;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use recipe::{FieldRecipe, FieldSpec, MollifySpec};
pub use scenarios::{random_sigma, Budget, ChaosCase, Outcome, Series, SCENARIOS};

use crate::error::{Error, Result};
use crate::rng::mix_seed;
use crate::stats::isotonic_nonincreasing;

/// Suite shipped with the crate, used when `default.suite` is requested and
/// no such file exists.
pub const DEFAULT_SUITE: &str = include_str!("../../suites/default.suite");

/// How lhs and rhs are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// `lhs <= rhs + 3 se + tolerance`
    UpperBound,
    /// `lhs >= rhs - 3 se - tolerance`
    LowerBound,
    /// `|lhs - rhs| <= tolerance + rel_tolerance |rhs| + 3 se`
    TwoSided,
    /// Largest isotonic-fit residual, in standard errors, at most `tolerance`.
    Trend,
    /// Always passes; the row carries the numbers.
    Report,
}

/// One claim of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimSpec {
    pub id: String,
    pub scenario: String,
    /// Defaults to the scenario's natural rule.
    #[serde(default)]
    pub decision: Option<Decision>,
    #[serde(default)]
    pub tolerance: f64,
    #[serde(default)]
    pub rel_tolerance: f64,
    /// Overrides the suite seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub field: Option<FieldRecipe>,
    #[serde(default)]
    pub params: toml::Table,
    #[serde(default)]
    pub budget: Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    #[serde(default)]
    pub name: String,
    /// Seed for claims without their own; mixed with the claim index.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, rename = "claim")]
    pub claims: Vec<ClaimSpec>,
}

impl Suite {
    pub fn parse(text: &str) -> Result<Self> {
        let suite: Suite = toml::from_str(text).map_err(|e| Error::Suite(e.to_string()))?;
        suite.validate()?;
        Ok(suite)
    }

    /// Reads a suite file; the name `default.suite` falls back to the
    /// built-in suite when no such file exists.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && path.file_name().is_some_and(|n| n == "default.suite") => {
                Self::parse(DEFAULT_SUITE)
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.claims {
            if c.id.is_empty() {
                return Err(Error::Suite("claim id must not be empty".into()));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(Error::Suite(format!("duplicate claim id {:?}", c.id)));
            }
            if !SCENARIOS.contains(&c.scenario.as_str()) {
                return Err(Error::Suite(format!("claim {:?}: unknown scenario {:?}", c.id, c.scenario)));
            }
            if !(c.tolerance >= 0.0 && c.rel_tolerance >= 0.0) {
                return Err(Error::Suite(format!("claim {:?}: tolerances must be nonnegative", c.id)));
            }
        }
        Ok(())
    }
}

/// One row of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub scenario: String,
    pub decision: Option<Decision>,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub std_error: Option<f64>,
    /// Smallest constant making the one-sided bound hold.
    pub implied_constant: Option<f64>,
    pub pass: bool,
    pub seed: Option<u64>,
    pub error: Option<String>,
    pub detail: serde_json::Value,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub suite_seed: Option<u64>,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suite: String,
    pub environment: Environment,
    pub rows: Vec<ReportRow>,
    pub pass: bool,
    pub wall_seconds: f64,
}

/// Applies the decision rule. Returns `(lhs, rhs, pass)` as reported.
fn decide(claim: &ClaimSpec, out: &Outcome, rule: Decision) -> (f64, f64, bool) {
    let slack = claim.tolerance + out.slack + 3.0 * out.std_error;
    let (lhs, rhs) = (out.lhs, out.rhs);
    let ok = match rule {
        Decision::UpperBound => lhs <= rhs + slack,
        Decision::LowerBound => lhs >= rhs - slack,
        Decision::TwoSided => (lhs - rhs).abs() <= slack + claim.rel_tolerance * rhs.abs(),
        Decision::Report => true,
        Decision::Trend => {
            let limit = if claim.tolerance > 0.0 { claim.tolerance } else { 3.0 };
            let residual = out.series.as_ref().map_or(f64::INFINITY, trend_residual);
            return (residual, limit, residual <= limit && out.gate);
        }
    };
    (lhs, rhs, ok && !lhs.is_nan() && out.gate)
}

/// Largest residual of the isotonic fit in units of the point's standard
/// error (absolute when the error is zero).
pub fn trend_residual(s: &Series) -> f64 {
    let sign = if s.increasing { -1.0 } else { 1.0 };
    let v: Vec<f64> = s.values.iter().map(|x| sign * x).collect();
    let fit = isotonic_nonincreasing(&v);
    v.iter()
        .zip(&fit)
        .zip(&s.std_errors)
        .map(|((a, b), se)| if *se > 0.0 { (a - b).abs() / se } else { (a - b).abs() })
        .fold(0.0, f64::max)
}

fn claim_seed(suite_seed: Option<u64>, claim: &ClaimSpec, index: usize) -> Option<u64> {
    claim.seed.or_else(|| suite_seed.map(|s| mix_seed(&[s, index as u64])))
}

/// Runs one claim; scenario failures become an error row.
pub fn run_claim(claim: &ClaimSpec, seed: Option<u64>) -> ReportRow {
    let started = Instant::now();
    let ctx = scenarios::Ctx { field: claim.field.as_ref(), params: &claim.params, budget: &claim.budget, seed };
    let mut row = ReportRow {
        id: claim.id.clone(),
        scenario: claim.scenario.clone(),
        decision: claim.decision,
        lhs: None,
        rhs: None,
        std_error: None,
        implied_constant: None,
        pass: false,
        seed,
        error: None,
        detail: serde_json::Value::Null,
        wall_seconds: 0.0,
    };
    match scenarios::run(&claim.scenario, &ctx) {
        Ok(out) => {
            let rule = claim.decision.unwrap_or(out.decision);
            let (lhs, rhs, pass) = decide(claim, &out, rule);
            row.decision = Some(rule);
            row.lhs = Some(lhs);
            row.rhs = Some(rhs).filter(|v| !v.is_nan());
            row.std_error = Some(out.std_error);
            row.implied_constant = out.base.filter(|b| *b > 0.0).map(|b| out.lhs / b);
            row.pass = pass;
            row.detail = out.detail;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row.wall_seconds = started.elapsed().as_secs_f64();
    row
}

/// Runs every claim of the suite in parallel.
pub fn run_suite(suite: &Suite) -> Result<VerificationReport> {
    suite.validate()?;
    let started = Instant::now();
    let rows: Vec<ReportRow> = suite
        .claims
        .par_iter()
        .enumerate()
        .map(|(i, c)| run_claim(c, claim_seed(suite.seed, c, i)))
        .collect();
    Ok(VerificationReport {
        suite: suite.name.clone(),
        environment: Environment {
            version: env!("CARGO_PKG_VERSION").into(),
            suite_seed: suite.seed,
            workers: rayon::current_num_threads(),
        },
        pass: rows.iter().all(|r| r.pass),
        rows,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6e}"))
}

impl VerificationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table, one line per claim.
    pub fn to_table(&self) -> String {
        let header = ["id", "scenario", "lhs", "rhs", "std_error", "implied_C", "result"];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                let result = match (&r.error, r.pass) {
                    (Some(e), _) => format!("ERROR {e}"),
                    (None, true) => "PASS".into(),
                    (None, false) => "FAIL".into(),
                };
                [r.id.clone(), r.scenario.clone(), cell(r.lhs), cell(r.rhs), cell(r.std_error), cell(r.implied_constant), result]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        for row in &body {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut out, &cells);
        }
        let passed = self.rows.iter().filter(|r| r.pass).count();
        let _ = writeln!(out, "{passed}/{} claims passed", self.rows.len());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_suite_passes() {
        let r = run_suite(&Suite::parse("").unwrap()).unwrap();
        assert!(r.rows.is_empty() && r.pass);
        assert!(r.to_table().contains("0/0"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = "[[claim]]\nid = \"a\"\nscenario = \"select_m\"\n[[claim]]\nid = \"a\"\nscenario = \"select_m\"\n";
        assert!(matches!(Suite::parse(text), Err(Error::Suite(_))));
        assert!(matches!(Suite::parse("[[claim]]\nid = \"a\"\nscenario = \"nope\"\n"), Err(Error::Suite(_))));
        assert!(matches!(Suite::parse("bogus = 1"), Err(Error::Suite(_))));
    }

    #[test]
    fn zero_functional_is_trivial() {
        let text = r#"
            [[claim]]
            id = "zero"
            scenario = "occupation"
            seed = 1
            params = { function = { kind = "zero" } }
            budget = { paths = 100 }
        "#;
        let r = run_suite(&Suite::parse(text).unwrap()).unwrap();
        assert_eq!(r.rows[0].lhs, Some(0.0));
        assert!(r.pass);
    }

    #[test]
    fn chaos_claim_matches_oracle() {
        let text = r#"
            [[claim]]
            id = "brownian-x2"
            scenario = "chaos_residual"
            tolerance = 1e-3
            params = { case = "brownian-x2", order = 1 }
        "#;
        let r = run_suite(&Suite::parse(text).unwrap()).unwrap();
        let row = &r.rows[0];
        assert!(row.pass, "{row:?}");
        assert!((row.lhs.unwrap() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn singular_field_without_mollification_is_a_scenario_error() {
        let text = r#"
            [[claim]]
            id = "singular"
            scenario = "occupation"
            seed = 3
            field = { field = { kind = "inverse", gamma = 1.0, d = 2 } }
            params = { function = { kind = "indicator", radius = 1.0 } }
            budget = { paths = 10 }
        "#;
        let r = run_suite(&Suite::parse(text).unwrap()).unwrap();
        assert!(r.rows[0].error.is_some() && !r.pass);
    }

    #[test]
    fn missing_seed_is_reported() {
        let text = "[[claim]]\nid = \"a\"\nscenario = \"range_projection\"\nparams = { count = 3 }\n";
        let r = run_suite(&Suite::parse(text).unwrap()).unwrap();
        assert!(r.rows[0].error.as_deref().unwrap().contains("seed"));
    }

    #[test]
    fn trend_rule() {
        let s = Series { values: vec![3.0, 2.0, 2.1, 1.0], std_errors: vec![0.1; 4], increasing: false };
        assert!((trend_residual(&s) - 0.5).abs() < 1e-12);
        let s = Series { values: vec![1.0, 2.0], std_errors: vec![0.0; 2], increasing: true };
        assert_eq!(trend_residual(&s), 0.0);
    }

    #[test]
    fn default_suite_parses() {
        let s = Suite::parse(DEFAULT_SUITE).unwrap();
        assert!(!s.claims.is_empty());
    }
}
