mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

use common::{bundled, case_path};

fn phasecap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phasecap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_case(case: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--case",
        case.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    phasecap(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Chain feeder with a PV candidate at each of its `n` load nodes.
fn chain_case(n: usize) -> serde_json::Value {
    let diag = |v: f64| json!([v, 0.0, 0.0, 0.0, v, 0.0, 0.0, 0.0, v]);
    let id = |i: usize| if i == 0 { "src".to_string() } else { format!("n{i}") };
    json!({
        "meta": {"name": "chain", "base_voltage_v": 230.0, "base_power_kva": 10.0,
                 "step_hours": 0.25, "horizon_steps": 1},
        "nodes": (0..=n).map(|i| json!({"id": id(i), "kind": if i == 0 {"slack"} else {"load"}})).collect::<Vec<_>>(),
        "branches": (1..=n).map(|i| json!({"id": format!("b{i}"), "from_node": id(i - 1), "to_node": id(i),
            "r_ohm": diag(0.05), "x_ohm": diag(0.02), "i_max_a": 200.0})).collect::<Vec<_>>(),
        "limits": {"u_min_pu": 0.9, "u_max_pu": 1.1, "vuf_max_pct": 2.0},
        "pv": (1..=n).map(|i| json!({"node": id(i), "curve": [1.0]})).collect::<Vec<_>>(),
        "loads": [{"node": "n1", "p_kw": {"a": [1.0]}}]
    })
}

#[test]
fn golden_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_case(
        &case_path("star_4node"),
        dir.path(),
        &["--strategies", "cs2,cs4", "--pv-cap-kw", "3.68", "--seed", "42"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert_eq!(summary, include_str!("fixtures/star_4node_cs2_cs4_summary.csv"));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("CS2") && stdout.contains("CS4"));
}

#[test]
fn unknown_strategy_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_case(&case_path("two_node"), dir.path(), &["--strategies", "cs9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cs1, cs2, cs3, cs4, cs5"), "{}", stderr(&o));
}

#[test]
fn too_many_candidates_for_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("chain7.json");
    std::fs::write(&case, chain_case(7).to_string()).unwrap();
    let o = run_case(&case, &dir.path().join("out"), &["--strategies", "cs1", "--minlp-method", "enumeration"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("branch_and_bound"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn help_lists_every_flag() {
    let o = phasecap(&["run", "--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in [
        "--case",
        "--strategies",
        "--pv-cap-kw",
        "--seed",
        "--decomposition",
        "--minlp-method",
        "--node-limit",
        "--enumeration-cap",
        "--kkt-tol",
        "--feas-tol",
        "--max-iter",
        "--time-limit-s",
        "--oracle-tol",
        "--out",
        "--log-format",
        "--jobs",
        "--include-timing",
    ] {
        assert!(text.contains(flag), "{flag} missing");
    }
}

#[test]
fn bad_arguments_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let case = case_path("two_node");
    let o = run_case(&case, dir.path(), &["--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run_case(&case, dir.path(), &["--pv-cap-kw", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run_case(&case, dir.path(), &["--kkt-tol", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_case_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_case(&dir.path().join("absent.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("absent.json"));
}

#[test]
fn malformed_case_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("bad.json");
    std::fs::write(&case, "{\"meta\": 1}").unwrap();
    let o = run_case(&case, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infeasible_limits_exit_with_solve_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut file = bundled("two_node").to_case_file();
    file.limits.u_min_pu = 0.85;
    file.limits.u_max_pu = 0.95;
    let case = dir.path().join("tight.json");
    std::fs::write(&case, serde_json::to_string(&file).unwrap()).unwrap();
    let o = run_case(&case, &dir.path().join("out"), &["--strategies", "cs4"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("infeasible"), "{}", stderr(&o));
    // Reports are still written for inspection.
    assert!(dir.path().join("out/summary.csv").is_file());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "0")] {
        let o = run_case(&case_path("star_4node"), out, &["--jobs", jobs]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["summary.csv", "voltage_hist.csv", "vuf_hist.csv", "losses_per_t.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn timing_column_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_case(&case_path("two_node"), dir.path(), &["--strategies", "cs5", "--include-timing"]);
    assert!(o.status.success());
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert!(row[2].parse::<f64>().unwrap() >= 0.0);
}

#[test]
fn csv_log_goes_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_case(&case_path("two_node"), dir.path(), &["--strategies", "cs4", "--log-format", "csv"]);
    assert!(o.status.success());
    let err = stderr(&o);
    assert!(err.lines().count() > 5, "{err}");
}
