//! End-to-end runs of the binary. Statistical subcommands are pinned to
//! seed 42, so every assertion here is deterministic.

use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cutstack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_report(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("single JSON document")
}

#[test]
fn stages_prints_heights_and_params_echo() {
    let out = run(&["stages", "--j-max", "6"]);
    let doc = json_report(&out);
    assert_eq!(doc["params"]["j_max"], 6);
    assert_eq!(doc["params"]["r_prime"], "j+1");
    let stages = doc["report"]["stages"].as_array().unwrap();
    let heights: Vec<&str> = stages.iter().map(|s| s["height"].as_str().unwrap()).collect();
    assert_eq!(heights, ["1", "2", "18", "216", "6480", "194400"]);
    assert_eq!(stages[2]["measure"], "3/2");
}

#[test]
fn stages_single_stage_table() {
    let out = run(&["stages", "--j-max", "1"]);
    let doc = json_report(&out);
    let stages = doc["report"]["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 1);
    assert_eq!(stages[0]["height"], "1");
    assert_eq!(stages[0]["measure"], "1/1");
    assert_eq!(stages[0]["r"], serde_json::Value::Null);
}

#[test]
fn correlate_emits_exact_rational_strings() {
    let out = run(&["correlate", "--a", "stage=2,levels=0", "--n", "2", "--depth", "3"]);
    let doc = json_report(&out);
    assert_eq!(doc["report"]["lo"], "1/4");
    assert_eq!(doc["report"]["hi"], "1/4");
    assert_eq!(doc["report"]["n"], "2");
}

#[test]
fn correlate_auto_depth_descends_to_exactness() {
    let out = run(&["correlate", "--a", "stage=3,levels=0", "--n", "18"]);
    let doc = json_report(&out);
    assert_eq!(doc["report"]["depth"], 5);
    assert_eq!(doc["report"]["lo"], "23/288");
    assert_eq!(doc["report"]["unresolved"], "0/1");
}

#[test]
fn negative_powers_swap_operands() {
    let fwd = json_report(&run(&[
        "correlate", "--a", "stage=3,levels=0..8", "--b", "stage=2,levels=0", "--n", "5",
        "--depth", "4",
    ]));
    let bwd = json_report(&run(&[
        "correlate", "--a", "stage=2,levels=0", "--b", "stage=3,levels=0..8", "--n", "-5",
        "--depth", "4",
    ]));
    assert_eq!(fwd["report"]["lo"], bwd["report"]["lo"]);
    assert_eq!(fwd["report"]["hi"], bwd["report"]["hi"]);
    assert_eq!(bwd["report"]["n"], "-5");
}

#[test]
fn scan_csv_has_the_pinned_columns() {
    let out = run(&["scan", "--mode", "half", "--a", "stage=2,levels=0", "--format", "csv"]);
    assert!(out.status.success());
    let body = String::from_utf8(out.stdout).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("n,lo,hi,target,deviation_bound"));
    assert_eq!(lines.next(), Some("2,1/4,1/4,1/4,0/1"));
    assert_eq!(lines.next(), Some("216,1/4,1/4,1/4,0/1"));
    // The parameter echo stays out of the table.
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("\"spacers\":\"paper\""));
}

#[test]
fn components_defaults_track_the_power() {
    let out = run(&["components", "--n", "3", "--j-max", "7"]);
    let doc = json_report(&out);
    assert_eq!(doc["report"]["stage"], 5);
    assert_eq!(doc["report"]["depth"], 7);
    assert_eq!(doc["report"]["count"], 3);
    assert_eq!(doc["report"]["residue_match"], true);
}

#[test]
fn malformed_spacers_fail_loudly() {
    let out = run(&["stages", "--spacers", "[[0,0],[0,0]]"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("spacer vector has length 2, expected r = 6"), "stderr: {err}");
}

#[test]
fn poisson_cov_reports_pass_against_exact_quarter() {
    let out = run(&[
        "poisson", "cov", "--a", "stage=2,levels=0", "--n", "2", "--samples", "5000",
        "--seed", "42",
    ]);
    let doc = json_report(&out);
    assert_eq!(doc["report"]["exact_lo"], "1/4");
    assert_eq!(doc["report"]["exact_hi"], "1/4");
    assert_eq!(doc["report"]["coverage_gap"], "0/1");
    assert_eq!(doc["report"]["pass"], true);
}

#[test]
fn poisson_rejects_tiny_sample_counts() {
    let out = run(&["poisson", "cov", "--a", "stage=2,levels=0", "--n", "2", "--samples", "10"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("at least 1000 samples"));
}

#[test]
fn verify_default_preset_passes_with_exit_zero() {
    let out = run(&["verify", "--seed", "42", "--samples", "20000"]);
    let doc = json_report(&out);
    assert_eq!(doc["pass"], true);
    let checks = doc["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["status"] == "pass"));
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"01_height_recurrence"));
    assert!(names.contains(&"06_components_n4"));
    assert!(names.contains(&"10_suspension_rigidity"));
    // Exact checks precede statistical ones.
    let first_statistical = names.iter().position(|n| n.starts_with("08_")).unwrap();
    assert!(names[..first_statistical].iter().all(|n| !n.starts_with("08_")
        && !n.starts_with("09_")
        && !n.starts_with("10_")));
}

#[test]
fn verify_zeroed_spacers_fails_the_half_limit_checks() {
    let config = std::env::temp_dir().join("cutstack-zeroed-config.json");
    std::fs::write(
        &config,
        r#"{"j_max": 3, "spacers": [[0, 0], [0, 0, 0, 0, 0, 0]]}"#,
    )
    .unwrap();
    let out = run(&[
        "verify", "--config", config.to_str().unwrap(), "--samples", "20000",
    ]);
    assert!(!out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["pass"], false);
    let failing: Vec<&str> = doc["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["status"] == "fail")
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failing, ["03_half_limit_instance", "07_scan_half"]);
}

#[test]
fn verify_surfaces_construction_errors_as_a_failing_check() {
    let out = run(&["verify", "--r-prime", "1,1", "--j-max", "4", "--samples", "2000"]);
    assert!(!out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["checks"][0]["name"], "00_construction");
    assert_eq!(doc["checks"][0]["status"], "fail");
}
