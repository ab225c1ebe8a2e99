use std::path::Path;
use std::process::{Command, Output};

fn msde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msde")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn certify_zero_field_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = msde(dir.path(), &["certify", "--field", "zero"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("msde-out/certificate.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], true);
}

#[test]
fn strong_inverse_drift_fails_the_morrey_clause() {
    let dir = tempfile::tempdir().unwrap();
    let o = msde(dir.path(), &["certify", "--field", "inverse", "--gamma", "10", "--bhat", "0.1"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("morrey_constant_b_M"));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "paths = \"many\"\n").unwrap();
    assert_eq!(code(&msde(dir.path(), &["--config", "bad.toml", "certify", "--field", "zero"])), 2);
    std::fs::write(dir.path().join("bad.toml"), "unknown_key = 1\n").unwrap();
    assert_eq!(code(&msde(dir.path(), &["--config", "bad.toml", "certify", "--field", "zero"])), 2);
    assert_eq!(code(&msde(dir.path(), &["simulate", "--field", "no-such-field", "--seed", "1"])), 2);
    assert_eq!(code(&msde(dir.path(), &["frobnicate"])), 2);
}

#[test]
fn stochastic_commands_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = msde(dir.path(), &["simulate", "--field", "bm", "--M", "10"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
    assert_eq!(code(&msde(dir.path(), &["chaos", "project", "--case", "brownian-x2", "--order", "1", "--M", "100"])), 2);
    assert_eq!(code(&msde(dir.path(), &["estimate", "occupation", "--field", "bm", "--M", "10"])), 2);
}

#[test]
fn simulate_is_reproducible_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    for (out, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let o = msde(dir.path(), &["simulate", "--field", "bm", "--M", "1000", "--seed", "7", "--out", out, "--workers", workers]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["paths.msde", "summary.json"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(name)).unwrap());
        assert_eq!(a, std::fs::read(dir.path().join("c").join(name)).unwrap());
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "seed = 11\npaths = 50\nout = \"cfg-out\"\n[field]\nfield = { kind = \"ou\", d = 2, rate = 0.5 }\n",
    )
    .unwrap();
    assert_eq!(code(&msde(dir.path(), &["--config", "run.toml", "simulate"])), 0);
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("cfg-out/summary.json")).unwrap()).unwrap();
    assert_eq!((s["paths"].as_u64(), s["dim"].as_u64(), s["seed"].as_u64()), (Some(50), Some(2), Some(11)));
    assert_eq!(code(&msde(dir.path(), &["--config", "run.toml", "--seed", "12", "simulate", "--M", "20"])), 0);
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("cfg-out/summary.json")).unwrap()).unwrap();
    assert_eq!((s["paths"].as_u64(), s["seed"].as_u64()), (Some(20), Some(12)));
}

#[test]
fn chaos_residual_prints_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = msde(dir.path(), &["chaos", "residual", "--case", "brownian-x2", "--order", "1"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let v: f64 = text.split_whitespace().next().unwrap().parse().unwrap();
    assert!((v - 2.0).abs() < 1e-3, "{text}");
}

#[test]
fn estimate_reads_a_stored_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&msde(dir.path(), &["simulate", "--field", "bm", "--d", "2", "--M", "500", "--seed", "3"])), 0);
    let o = msde(dir.path(), &["estimate", "exit-time", "--input", "msde-out/paths.msde", "--rho", "0.5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("msde-out/estimate.json")).unwrap()).unwrap();
    let v = rows[0]["lhs"].as_f64().unwrap();
    assert!(v > 0.0 && v < 0.25);
}

#[test]
fn verify_writes_report_and_reflects_failures() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("s.suite"),
        r#"
seed = 5
[[claim]]
id = "ok"
scenario = "select_m"
params = { n = [10, 100], delta = [0.5] }
[[claim]]
id = "wrong-oracle"
scenario = "chaos_residual"
decision = "upper_bound"
params = { case = "brownian-x2", order = 0 }
tolerance = 0.5
"#,
    )
    .unwrap();
    let o = msde(dir.path(), &["verify", "--suite", "s.suite"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rep = dir.path().join("msde-out/report.json");
    assert!(rep.exists() && dir.path().join("msde-out/report.txt").exists());
    assert_eq!(code(&msde(dir.path(), &["report", "--input", "msde-out/report.json"])), 0);

    // the oscillating diffusion is not x-independent, so a zero bound fails
    std::fs::write(
        dir.path().join("f.suite"),
        "seed = 1\n[[claim]]\nid = \"vmo-zero\"\nscenario = \"vmo\"\ntolerance = 1e-8\nparams = { rho = 0.25 }\nbudget = { nodes = 64 }\n",
    )
    .unwrap();
    let o = msde(dir.path(), &["--out", "f", "verify", "--suite", "f.suite"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(code(&msde(dir.path(), &["report", "--input", "f/report.json"])), 1);

    std::fs::write(dir.path().join("dup.suite"), "[[claim]]\nid = \"a\"\nscenario = \"select_m\"\n[[claim]]\nid = \"a\"\nscenario = \"select_m\"\n").unwrap();
    assert_eq!(code(&msde(dir.path(), &["verify", "--suite", "dup.suite"])), 2);
}
