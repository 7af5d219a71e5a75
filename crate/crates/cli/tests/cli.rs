use std::process::{Command, Output};

use parisi_cli::RunConfig;
use serde_json::Value;

fn parisi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parisi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error line");
    serde_json::from_str(line).expect("json error")
}

#[test]
fn eval_functional_is_deterministic_without_meta() {
    let a = parisi(&["eval-functional", "--preset", "sk-rs", "--no-meta"]);
    let b = parisi(&["eval-functional", "--preset", "sk-rs", "--no-meta"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    let parts = v["term_phi"].as_f64().unwrap() + v["term_theta"].as_f64().unwrap() + v["term_int"].as_f64().unwrap();
    assert!((v["total"].as_f64().unwrap() - parts).abs() < 1e-14);
    assert!(v.get("meta").is_none());
}

#[test]
fn meta_block_is_added_by_default() {
    let out = parisi(&["eval-functional", "--preset", "sk-rs"]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["meta"]["command"], "eval-functional");
}

#[test]
fn malformed_alpha_exits_with_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{
            "model": {"dim": 1, "betas": [[2, 0.5]]},
            "psi": {"preset": "linear", "z": [[1.0]]},
            "alpha": {"qs": [0.0, 0.5, 1.0], "ms": [0.6, 0.1, 1.0]},
            "base": {"preset": "ising"}
        }"#,
    )
    .unwrap();
    let out = parisi(&["eval-phi", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_error(&out);
    assert!(err["error"]["kind"].is_string());
    assert!(err["error"]["message"].as_str().unwrap().contains("config"));
}

#[test]
fn missing_config_is_a_validation_error() {
    let out = parisi(&["eval-phi"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error(&out)["error"]["kind"], "invalid_argument");
    let out = parisi(&["eval-phi", "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn preset_written_to_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, RunConfig::preset("sk-rs").unwrap().to_json()).unwrap();
    let from_file = parisi(&["eval-functional", "--config", path.to_str().unwrap(), "--no-meta"]);
    let from_preset = parisi(&["eval-functional", "--preset", "sk-rs", "--no-meta"]);
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, from_preset.stdout);
}

#[test]
fn minimize_writes_trace_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = parisi(&["minimize", "--preset", "sk-1rsb", "--output", dir.path().to_str().unwrap(), "--no-meta"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.path().join("minimize-trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "iter,value,grad_norm,m_0,m_1,m_2,m_3,m_4");
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("minimize.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
}

#[test]
fn eval_phi_csv_dump_has_level_columns() {
    let out = parisi(&["eval-phi", "--preset", "sk-rs", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "level,q,x_0,value");
}

#[test]
fn verify_passes_and_is_seed_stable() {
    let a = parisi(&["verify", "--no-meta", "--seed", "11"]);
    let b = parisi(&["verify", "--no-meta", "--seed", "11"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout_json(&a)["all_passed"], true);
}

#[test]
fn sequential_thread_setting_matches_default() {
    let a = parisi(&["eval-phi", "--preset", "sk-1rsb", "--no-meta"]);
    let b = parisi(&["eval-phi", "--preset", "sk-1rsb", "--no-meta", "--threads", "1"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn potts_identities_reject_cubic_models() {
    let out = parisi(&["potts", "--betas", "2:1,3:1", "--case", "identities"]);
    assert_eq!(out.status.code(), Some(1));
    let out = parisi(&["potts", "--betas", "2:x"]);
    assert_eq!(out.status.code(), Some(1));
    let out = parisi(&["potts", "--dim", "3", "--case", "identities", "--no-meta"]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["gamma_identities"]["passed"], true);
}
