use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};
use sheetsew::{exit_code, run, validate, CliError, ExperimentConfig, Overrides};

fn config(experiment: &str, params: Value, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(experiment, params);
    c.seed = 42;
    c.out = out.to_path_buf();
    c
}

fn small_sample(write_paths: bool) -> Value {
    json!({
        "field": { "model": { "kind": "fractional_brownian_sheet", "hurst": [0.7, 0.3], "dim": 2 }, "level": 3 },
        "write_paths": write_paths
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn algebra_selftest_reports_pass_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("algebra-selftest", Value::Null, dir.path());
    c.samples = Some(200);
    let result = run(c);
    assert_eq!(exit_code(&result, true), 0);
    let report = read_json(&dir.path().join("identity_report.json"));
    let text = report.to_string();
    assert!(text.contains("passed"), "{text}");
    let checks = read_json(&dir.path().join("checks.json"));
    let checks = checks.as_array().unwrap();
    assert!(checks.len() >= 5);
    assert!(checks.iter().all(|c| c["passed"] == json!(true)));
}

#[test]
fn hurst_out_of_range_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let params = json!({
        "field": { "model": { "kind": "fractional_brownian_sheet", "hurst": [1.2, 0.5], "dim": 2 }, "level": 3 }
    });
    let c = config("sample", params, dir.path());
    let v = validate(&c);
    assert!(v.iter().any(|v| v.is_error() && v.message.contains("H_i ∈ (0,1)")), "{v:?}");
    let result = run(c);
    assert!(matches!(result, Err(CliError::Validation(_))));
    assert_eq!(exit_code(&result, false), 1);
}

#[test]
fn grid_above_sampler_limit_is_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    let params = json!({ "field": { "model": { "kind": "brownian_sheet", "dim": 2 }, "level": 9 } });
    let v = validate(&config("sample", params, dir.path()));
    assert!(v.iter().any(|v| v.field == "params.field.level" && v.message.contains("limit")), "{v:?}");
}

#[test]
fn bessel_index_above_bound_warns_with_the_rule() {
    let dir = tempfile::tempdir().unwrap();
    let params = json!({
        "holder": { "alpha": 2.0 },
        "notion": "additive",
        "zeta": [0.5, 0.5]
    });
    let v = validate(&config("localtime", params, dir.path()));
    let warning = v.iter().find(|v| !v.is_error()).expect("warning");
    assert!(warning.message.contains("α < Σ 1/(2ζ_i) − n/2"), "{}", warning.message);
    assert!(v.iter().all(|v| !v.is_error()), "{v:?}");
}

#[test]
fn unknown_experiment_and_zero_workers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let v = validate(&config("plot", Value::Null, dir.path()));
    assert!(v.iter().any(|v| v.field == "experiment"));
    let mut c = config("algebra-selftest", Value::Null, dir.path());
    c.workers = Some(0);
    assert!(validate(&c).iter().any(|v| v.field == "workers"));
}

#[test]
fn same_config_gives_identical_csv_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut first = config("sample", small_sample(true), a.path());
    first.samples = Some(6);
    let mut second = first.clone();
    first.apply(&Overrides { workers: Some(1), ..Default::default() });
    second.apply(&Overrides { workers: Some(2), out: Some(b.path().to_path_buf()), ..Default::default() });
    assert_eq!(first.hash(), second.hash());
    let ma = run(first).unwrap();
    let mb = run(second).unwrap();
    assert_eq!(ma.config_hash, mb.config_hash);
    for name in ["samples.csv", "corner_variance.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_override_changes_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut first = config("sample", small_sample(true), a.path());
    first.samples = Some(2);
    let mut second = first.clone();
    second.apply(&Overrides { seed: Some(43), out: Some(b.path().to_path_buf()), ..Default::default() });
    assert_ne!(first.hash(), second.hash());
    run(first).unwrap();
    run(second).unwrap();
    let x = std::fs::read(a.path().join("samples.csv")).unwrap();
    assert_ne!(x, std::fs::read(b.path().join("samples.csv")).unwrap());
}

#[test]
fn manifest_records_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("sample", small_sample(false), dir.path());
    c.samples = Some(4);
    let hash = c.hash();
    run(c.clone()).unwrap();
    let m = read_json(&dir.path().join("manifest.json"));
    assert_eq!(m["config_hash"], json!(hash));
    assert_eq!(hash.len(), 64);
    assert_eq!(m["tool_version"], json!(env!("CARGO_PKG_VERSION")));
    assert!(m["wall_seconds"].as_f64().unwrap() >= 0.0);
    let stages: Vec<&str> = m["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert!(stages.contains(&"sample"), "{stages:?}");
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs.contains(&json!("corner_variance.csv")));
    assert!(!outputs.contains(&json!("samples.csv")));
    let copy: ExperimentConfig = serde_json::from_value(read_json(&dir.path().join("config.json"))).unwrap();
    assert_eq!(copy, c);
    assert!(std::fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn failed_check_maps_to_status_three_only_in_check_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut params = small_sample(false);
    params["variance_sigmas"] = json!(0.0);
    let mut c = config("sample", params, dir.path());
    c.samples = Some(3);
    let result = run(c);
    let m = result.as_ref().unwrap();
    let failed = m.failed_checks();
    assert!(failed.len() == 1 && failed[0].starts_with("corner_variance"), "{failed:?}");
    assert_eq!(exit_code(&result, false), 0);
    assert_eq!(exit_code(&result, true), 3);
}

#[test]
fn lnd_on_half_sheet_reports_positive_constant() {
    let dir = tempfile::tempdir().unwrap();
    let params = json!({
        "model": { "kind": "fractional_brownian_sheet", "hurst": [0.5, 0.5], "dim": 2 },
        "notion": "multiplicative",
        "level": 3
    });
    let result = run(config("lnd", params, dir.path()));
    assert_eq!(exit_code(&result, true), 0, "{result:?}");
    let report = read_json(&dir.path().join("lnd_report.json"));
    assert!(report["c_hat"].as_f64().unwrap() > 0.0);
}

#[test]
fn numerical_failure_carries_stage_tag_and_status_two() {
    let dir = tempfile::tempdir().unwrap();
    // Per-path tail extrapolation on a level-5 grid trips the truncation alarm.
    let params = json!({
        "field": { "model": { "kind": "brownian_sheet", "dim": 2 }, "level": 5 },
        "density_samples": 1,
        "holder": { "alpha": 0.3, "max_tail": 1e-6, "radial_steps": 64 }
    });
    let mut c = config("localtime", params, dir.path());
    c.samples = Some(2);
    let result = run(c);
    match &result {
        Err(CliError::Stage { stage, .. }) => assert_eq!(stage, "holder"),
        other => panic!("expected a stage error, got {other:?}"),
    }
    assert_eq!(exit_code(&result, false), 2);
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sheetsew")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sample.json");
    let out = dir.path().join("out");
    let mut c = config("sample", small_sample(false), &out);
    c.samples = Some(3);
    std::fs::write(&path, serde_json::to_string(&c).unwrap()).unwrap();
    let p = path.to_str().unwrap();

    let ok = binary(&["sample", "--config", p, "--workers", "1"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("manifest.json").exists());

    let wrong = binary(&["lnd", "--config", p]);
    assert_eq!(wrong.status.code(), Some(1));

    let zero = binary(&["sample", "--config", p, "--samples", "0"]);
    assert_eq!(zero.status.code(), Some(1));

    let missing = binary(&["sample", "--config", dir.path().join("none.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));

    let mut strict = c.clone();
    strict.params["variance_sigmas"] = json!(0.0);
    std::fs::write(&path, serde_json::to_string(&strict).unwrap()).unwrap();
    let failing = binary(&["sample", "--config", p, "--check"]);
    assert_eq!(failing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&failing.stdout).contains("FAIL corner_variance"));
}
