use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use spikelab::{run_config, RunConfig, Task, EXIT_IO, EXIT_NUMERICAL, EXIT_VALIDATION};

fn spikelab(args: &[&str], config: &str, dir: &Path) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_spikelab"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn minimal_config_writes_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spikelab(&[], r#"{"N":3,"p":3,"task":"ground-state"}"#, tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let dir = tmp.path().join("out");
    let json: Value = serde_json::from_str(&fs::read_to_string(dir.join("profile.json")).unwrap()).unwrap();
    let hash = json["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    let csv = fs::read_to_string(dir.join("profile.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# config_hash: {hash}"));
    assert!(json["nehari_residual"].as_f64().unwrap().abs() < 1e-6);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], hash);
    assert!(manifest["tolerances"]["ground_state.tol"].is_number());
}

#[test]
fn supercritical_exponent_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spikelab(&["ground-state"], r#"{"N":3,"p":5}"#, tmp.path());
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    let msg = stderr(&out);
    assert!(msg.contains("'p'") && msg.contains("(N+2)/(N-2)"), "{msg}");
}

#[test]
fn bad_expression_names_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"N":3,"p":3,"domain":{"ball":{"center":[0,0,0],"radius":1}},"V":"1+*x1","Q":[1,0,0]}"#;
    let out = spikelab(&["constants"], cfg, tmp.path());
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    assert!(stderr(&out).contains("'V'"), "{}", stderr(&out));
}

#[test]
fn nonpositive_coefficient_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"N":3,"p":3,"domain":{"ball":{"center":[0,0,0],"radius":1}},"J":"x1"}"#;
    let out = spikelab(&["landscape"], cfg, tmp.path());
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    assert!(stderr(&out).contains("'J'"), "{}", stderr(&out));
}

#[test]
fn q_off_the_boundary_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"N":3,"p":3,"domain":{"ball":{"center":[0,0,0],"radius":1}},"Q":[0.5,0,0]}"#;
    let out = spikelab(&["constants"], cfg, tmp.path());
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    assert!(stderr(&out).contains("'Q'"), "{}", stderr(&out));
}

#[test]
fn missing_task_and_conflicting_task() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spikelab(&[], r#"{"N":3,"p":3}"#, tmp.path());
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    let out = spikelab(&["constants"], r#"{"N":3,"p":3,"task":"ground-state"}"#, tmp.path());
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    assert!(stderr(&out).contains("'task'"));
}

#[test]
fn constant_coefficients_predict_without_tags() {
    // constant coefficients on a ball: Γ and Σ̄ are both constant, every point is degenerate
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"N":3,"p":3,"domain":{"ball":{"center":[0,0,0],"radius":1}},"samples":500}"#;
    let out = spikelab(&["predict"], cfg, tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let json: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/predictions.json")).unwrap()).unwrap();
    assert_eq!(json["function"], "SIGMA_BAR");
    assert!(json["reports"].as_array().unwrap().iter().all(|r| r["tags"].as_array().unwrap().is_empty()));
}

#[test]
fn short_truncation_radius_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"N":3,"p":3,"domain":{"ball":{"center":[0,0,0],"radius":1}},"Q":[0,0,1],
                 "quadrature":{"R":3}}"#;
    let out = spikelab(&["verify-expansion"], cfg, tmp.path());
    assert_eq!(out.status.code(), Some(EXIT_NUMERICAL), "{}", stderr(&out));
    assert!(stderr(&out).contains("quadrature.R"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let cfg = RunConfig::from_json(r#"{"N":1,"p":3}"#).unwrap();
    let err = run_config(Task::GroundState, cfg, Some(&blocker.join("sub")), None).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_IO);
}

#[test]
fn seed_override_changes_hash_only_through_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = || RunConfig::from_json(r#"{"N":1,"p":3}"#).unwrap();
    let a = run_config(Task::GroundState, cfg(), Some(&tmp.path().join("a")), Some(1)).unwrap();
    let b = run_config(Task::GroundState, cfg(), Some(&tmp.path().join("b")), Some(2)).unwrap();
    let c = run_config(Task::GroundState, cfg(), Some(&tmp.path().join("c")), Some(1)).unwrap();
    assert_ne!(a.config_hash, b.config_hash);
    // the output directory is not part of the hash
    assert_eq!(a.config_hash, c.config_hash);
}

#[test]
fn verify_tasks_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"N":3,"p":3,"domain":{"ball":{"center":[0,0,0],"radius":1}},"V":"1+x1^2","Q":[1,0,0],
                 "eps_schedule":[0.2,0.1,0.05]}"#;
    let out = spikelab(&["verify-expansion"], cfg, tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("out/expansion.csv")).unwrap();
    let mut lines = csv.lines().skip(1);
    assert_eq!(lines.next().unwrap(), "eps,E,slope,target_sigma,mismatch");
    assert_eq!(lines.count(), 3);
}
