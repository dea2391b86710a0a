mod common;

use num_complex::Complex64;
use phasecap::metrics::{
    balance_losses_kwh, build_report, build_strategy_report, losses_per_t_kwh, read_report,
    summary_rows, total_losses_kwh, vuf_percent, write_outputs, OperatingPoint, OutputOptions,
    ReportFile,
};
use phasecap::oracle::{sweep_solve, InjectionSchedule};
use phasecap::strategy::{solve_strategy, StrategyId, StrategyOptions, StrategyOutcome};
use phasecap::{MetricsError, NetworkCase};

use common::{bundled, cap_pu, rel_diff};

fn solve(case: &NetworkCase, s: StrategyId, kw: f64) -> StrategyOutcome {
    solve_strategy(case, s, cap_pu(case, kw), 42, &StrategyOptions::default()).unwrap()
}

fn load_flow(case: &NetworkCase) -> OperatingPoint {
    let pf = sweep_solve(case, &InjectionSchedule::loads(case), 1e-13, 100).unwrap();
    OperatingPoint::from_power_flow(case, &pf)
}

#[test]
fn no_injection_means_no_losses() {
    let case = bundled("star_4node");
    let pf = sweep_solve(&case, &InjectionSchedule::zero(&case), 1e-12, 10).unwrap();
    let op = OperatingPoint::from_power_flow(&case, &pf);
    assert_eq!(total_losses_kwh(&case, &op).unwrap(), 0.0);
    assert!(losses_per_t_kwh(&case, &op).iter().all(|&l| l == 0.0));
}

#[test]
fn two_node_losses_match_closed_form() {
    let case = bundled("two_node");
    let (p, q, r, x): (f64, f64, f64, f64) = (0.1, 0.05, 0.1, 0.05);
    let b = 2.0 * (p * r + q * x) - 1.0;
    let v2 = (-b + (b * b - 4.0 * (p * p + q * q) * (r * r + x * x)).sqrt()) / 2.0;
    let per_step_pu = r * (p * p + q * q) / v2;
    let expected = per_step_pu * case.step_hours * case.base.power_kva * case.horizon_steps as f64;

    let op = load_flow(&case);
    let i2r = total_losses_kwh(&case, &op).unwrap();
    let balance = balance_losses_kwh(&case, &op);
    assert!(rel_diff(i2r, expected) < 1e-12, "{i2r} vs {expected}");
    assert!(rel_diff(balance, expected) < 1e-10, "{balance} vs {expected}");
}

#[test]
fn tampered_currents_fail_the_cross_check() {
    let case = bundled("feeder_13node");
    let mut op = load_flow(&case);
    for j in op.branch_currents[0].iter_mut() {
        for c in j.iter_mut() {
            *c *= 1.01;
        }
    }
    assert!(matches!(
        total_losses_kwh(&case, &op),
        Err(MetricsError::LossMismatch { .. })
    ));
}

#[test]
fn unbalance_of_balanced_and_degenerate_points() {
    let case = bundled("symmetric_3node");
    let op = load_flow(&case);
    for k in 0..op.timesteps.len() {
        for node in 0..case.nodes.len() {
            assert!(vuf_percent(&op, node, k).unwrap() < 1e-10);
        }
    }
    let mut zero = op.clone();
    zero.voltages[0][1] = [Complex64::default(); 3];
    assert!(matches!(
        vuf_percent(&zero, 1, 0),
        Err(MetricsError::DegenerateVoltage { node: 1, t: 0 })
    ));
}

#[test]
fn feasible_solutions_respect_the_unbalance_limit() {
    let case = bundled("weak_line");
    for s in StrategyId::ALL {
        let out = solve(&case, s, 100.0);
        let report = build_strategy_report(&case, &out).unwrap();
        let limit_pct = 100.0 * case.limits.vuf_max;
        assert!(report.vuf.max <= limit_pct + 1e-6, "{s}: {}", report.vuf.max);
        assert!(report.voltage.max <= case.limits.u_max + 1e-6);
        assert!(report.voltage.min >= case.limits.u_min - 1e-6);
    }
}

#[test]
fn report_shape_and_series() {
    let case = bundled("star_4node");
    let outs = [solve(&case, StrategyId::Cs2, 3.68), solve(&case, StrategyId::Cs4, 3.68)];
    let reports = build_report(&case, &outs).unwrap();
    assert_eq!(reports.len(), 2);
    let rows = summary_rows(&reports, OutputOptions::default());
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "CS2");
    assert_eq!(rows[1][2], "-");
    for r in &reports {
        assert_eq!(r.series.t.len(), case.horizon_steps);
        let energy: f64 = r.series.pv_energy_kwh.iter().sum();
        assert!(rel_diff(energy, r.objective_kwh) < 1e-9);
        let losses: f64 = r.series.losses_kwh.iter().sum();
        assert!(rel_diff(losses, r.losses_kwh) < 1e-12);
        let n_phases = 3 * (case.nodes.len() - 1) * case.horizon_steps;
        assert_eq!(r.voltages.len(), n_phases);
    }
    assert!(matches!(build_report(&case, &[]), Err(MetricsError::Empty)));
}

#[test]
fn outputs_round_trip_and_empty_writes_nothing() {
    let case = bundled("star_4node");
    let outs = [solve(&case, StrategyId::Cs5, 20.0)];
    let file = ReportFile {
        case: case.name.clone(),
        pv_cap_kw: 20.0,
        seed: 42,
        reports: build_report(&case, &outs).unwrap(),
    };
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    write_outputs(&file, &out, OutputOptions::default()).unwrap();
    for f in ["summary.csv", "voltage_hist.csv", "vuf_hist.csv", "losses_per_t.csv", "report.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let back = read_report(&out.join("report.json")).unwrap();
    assert_eq!(back, file);

    let empty = ReportFile {
        reports: Vec::new(),
        ..file.clone()
    };
    let nothing = dir.path().join("nothing");
    assert!(matches!(
        write_outputs(&empty, &nothing, OutputOptions::default()),
        Err(MetricsError::Empty)
    ));
    assert!(!nothing.exists());

    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, b"x").unwrap();
    assert!(matches!(
        write_outputs(&file, &blocker.join("sub"), OutputOptions::default()),
        Err(MetricsError::Io { .. })
    ));
}

fn parse_summary(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn star_feeder_summary_matches_fixture() {
    let case = bundled("star_4node");
    let outs: Vec<_> = StrategyId::ALL.iter().map(|&s| solve(&case, s, 3.68)).collect();
    let file = ReportFile {
        case: case.name.clone(),
        pv_cap_kw: 3.68,
        seed: 42,
        reports: build_report(&case, &outs).unwrap(),
    };
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&file, dir.path(), OutputOptions::default()).unwrap();
    let got = parse_summary(&std::fs::read_to_string(dir.path().join("summary.csv")).unwrap());
    let want = parse_summary(include_str!("fixtures/star_4node_summary.csv"));
    assert_eq!(got.len(), want.len());
    assert_eq!(got[0], want[0]);
    for (g, w) in got[1..].iter().zip(&want[1..]) {
        assert_eq!((&g[0], &g[2]), (&w[0], &w[2]));
        for c in [1, 3, 4, 5, 6] {
            let (a, b): (f64, f64) = (g[c].parse().unwrap(), w[c].parse().unwrap());
            assert!(rel_diff(a, b) <= 1e-5, "{} column {c}: {a} vs {b}", g[0]);
        }
    }
}
