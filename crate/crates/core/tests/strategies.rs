mod common;

use phasecap::formulation::VarKind;
use phasecap::solver::SolveStatus;
use phasecap::strategy::{
    assign_most_loaded_per_step, assign_peak_energy_fixed, assign_random_fixed,
    assign_random_per_step, solve_assignment, solve_minlp_timestep, solve_strategy, Decomposition,
    MinlpMethod, MinlpOptions, PhaseAssignment, StrategyId, StrategyOptions, StrategyOutcome,
};
use phasecap::{NetworkCase, Phase, StrategyError};

use common::{bundled, cap_pu};

use Phase::{A, B, C};

fn options() -> StrategyOptions {
    StrategyOptions::default()
}

/// Every (pv, t) must feed at most one phase.
fn assert_single_phase(case: &NetworkCase, out: &StrategyOutcome) {
    let p = &out.problem;
    for pv in 0..case.pv_candidates.len() {
        for t in 0..case.horizon_steps {
            let live = Phase::ALL
                .iter()
                .filter(|&&ph| {
                    let i = p.vars.get(VarKind::PvActive, pv, ph, t).unwrap();
                    out.result.x[i].abs() > 1e-6
                })
                .count();
            assert!(live <= 1, "{} pv {pv} t {t}", out.strategy);
            let chosen = out.assignment.phase_at(pv, t).unwrap();
            for ph in Phase::ALL.into_iter().filter(|&ph| ph != chosen) {
                let i = p.vars.get(VarKind::PvActive, pv, ph, t).unwrap();
                assert_eq!(out.result.x[i], 0.0);
            }
        }
    }
}

#[test]
fn random_draws_match_recorded_sequence() {
    let mut case = bundled("two_node");
    case.horizon_steps = 3;
    assert_eq!(assign_random_per_step(&case, 42).choice, vec![vec![A, C, A]]);
    assert_eq!(assign_random_per_step(&case, 0).choice, vec![vec![B, C, C]]);
    assert_eq!(assign_random_fixed(&case, 42).choice, vec![vec![A]]);
    assert_eq!(assign_random_fixed(&case, 0).choice, vec![vec![B]]);
    assert_eq!(
        assign_random_per_step(&case, 7),
        assign_random_per_step(&case, 7)
    );
}

#[test]
fn random_draws_are_uniform() {
    let mut case = bundled("two_node");
    case.horizon_steps = 30_000;
    let per_step = assign_random_per_step(&case, 42);
    let mut counts = [0usize; 3];
    for ph in &per_step.choice[0] {
        counts[ph.index()] += 1;
    }
    for c in counts {
        assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
    }

    let mut many = bundled("two_node");
    many.pv_candidates = vec![many.pv_candidates[0].clone(); 30_000];
    let fixed = assign_random_fixed(&many, 42);
    let mut counts = [0usize; 3];
    for row in &fixed.choice {
        counts[row[0].index()] += 1;
    }
    for c in counts {
        assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn load_following_picks_the_loaded_phase() {
    let mut case = bundled("two_node");
    let load = &mut case.loads[0];
    load.p.swap(0, 1);
    load.q.swap(0, 1);
    let cs4 = assign_most_loaded_per_step(&case);
    assert!(cs4.choice[0].iter().all(|&p| p == B));
    assert_eq!(assign_peak_energy_fixed(&case).choice, vec![vec![B]]);

    // Ties go to the earliest phase.
    for l in &mut case.loads {
        for k in 0..3 {
            l.p[k].iter_mut().for_each(|v| *v = 0.2);
        }
    }
    assert!(assign_most_loaded_per_step(&case).choice[0].iter().all(|&p| p == A));
}

#[test]
fn constant_loads_make_cs4_and_cs5_agree() {
    let mut case = bundled("star_4node");
    for l in &mut case.loads {
        for k in 0..3 {
            let first = l.p[k][0];
            l.p[k].iter_mut().for_each(|v| *v = first);
            let first = l.q[k][0];
            l.q[k].iter_mut().for_each(|v| *v = first);
        }
    }
    let cap = cap_pu(&case, 20.0);
    let cs4 = solve_strategy(&case, StrategyId::Cs4, cap, 42, &options()).unwrap();
    let cs5 = solve_strategy(&case, StrategyId::Cs5, cap, 42, &options()).unwrap();
    let h = case.horizon_steps;
    assert_eq!(cs4.assignment.expand(h), cs5.assignment.expand(h));
    assert!((cs4.result.objective_kwh - cs5.result.objective_kwh).abs() < 1e-9);
}

#[test]
fn optimal_assignment_dominates_heuristics() {
    let case = bundled("star_4node");
    for kw in [3.68, 100.0] {
        let cap = cap_pu(&case, kw);
        let best = solve_strategy(&case, StrategyId::Cs1, cap, 42, &options()).unwrap();
        assert_eq!(best.result.status, SolveStatus::Optimal);
        assert_single_phase(&case, &best);
        for s in [StrategyId::Cs2, StrategyId::Cs3, StrategyId::Cs4, StrategyId::Cs5] {
            let out = solve_strategy(&case, s, cap, 42, &options()).unwrap();
            assert_eq!(out.result.status, SolveStatus::Optimal);
            assert_single_phase(&case, &out);
            assert!(
                best.result.objective_kwh >= out.result.objective_kwh - 1e-6,
                "{s} at {kw} kW: {} > {}",
                out.result.objective_kwh,
                best.result.objective_kwh
            );
        }
    }
}

#[test]
fn joint_and_split_horizons_agree() {
    let case = bundled("star_4node");
    let cap = cap_pu(&case, 100.0);
    let split = options();
    let joint = StrategyOptions {
        decomposition: Decomposition::Monolithic,
        ..options()
    };
    for s in [StrategyId::Cs2, StrategyId::Cs5] {
        let a = solve_strategy(&case, s, cap, 42, &split).unwrap();
        let b = solve_strategy(&case, s, cap, 42, &joint).unwrap();
        assert_eq!(b.result.status, SolveStatus::Optimal);
        assert!((a.result.objective_kwh - b.result.objective_kwh).abs() <= 1e-6);
    }
    let a = solve_strategy(&case, StrategyId::Cs1, cap, 42, &split).unwrap();
    let b = solve_strategy(&case, StrategyId::Cs1, cap, 42, &joint).unwrap();
    assert_eq!(a.assignment, b.assignment);
    assert!((a.result.objective_kwh - b.result.objective_kwh).abs() <= 1e-6);
}

#[test]
fn zero_irradiance_gives_exactly_zero_output() {
    let case = bundled("two_node");
    let cap = cap_pu(&case, 3.68);
    for s in StrategyId::ALL {
        let out = solve_strategy(&case, s, cap, 42, &options()).unwrap();
        for ph in Phase::ALL {
            let i = out.problem.vars.get(VarKind::PvActive, 0, ph, 0).unwrap();
            assert_eq!(out.result.x[i], 0.0, "{s}");
        }
    }
}

fn with_method(method: MinlpMethod) -> MinlpOptions {
    MinlpOptions {
        method,
        ..MinlpOptions::default()
    }
}

#[test]
fn enumeration_on_one_candidate_solves_three_problems() {
    let case = bundled("two_node");
    let cap = cap_pu(&case, 100.0);
    let en = solve_minlp_timestep(&case, cap, 2, MinlpMethod::Enumeration, &with_method(MinlpMethod::Enumeration))
        .unwrap();
    assert_eq!(en.nlp_solves, 3);
    let bb = solve_minlp_timestep(&case, cap, 2, MinlpMethod::BranchAndBound, &with_method(MinlpMethod::BranchAndBound))
        .unwrap();
    assert!((en.result.objective_kwh - bb.result.objective_kwh).abs() <= 1e-6);
}

#[test]
fn branch_and_bound_matches_enumeration_on_three_candidates() {
    let case = bundled("star_4node");
    assert_eq!(case.pv_candidates.len(), 3);
    for kw in [3.68, 100.0] {
        let cap = cap_pu(&case, kw);
        for t in 1..3 {
            let en = solve_minlp_timestep(&case, cap, t, MinlpMethod::Enumeration, &MinlpOptions::default())
                .unwrap();
            let bb = solve_minlp_timestep(&case, cap, t, MinlpMethod::BranchAndBound, &MinlpOptions::default())
                .unwrap();
            assert!(
                (en.result.objective_kwh - bb.result.objective_kwh).abs() <= 1e-6,
                "t {t} at {kw} kW: {} vs {}",
                en.result.objective_kwh,
                bb.result.objective_kwh
            );
            assert!(!bb.node_limit_hit);
        }
    }
}

#[test]
fn node_limit_returns_incumbent_or_reports_none() {
    let case = bundled("star_4node");
    let cap = cap_pu(&case, 100.0);
    let full = solve_minlp_timestep(&case, cap, 2, MinlpMethod::BranchAndBound, &MinlpOptions::default())
        .unwrap();
    let mut cut_short = 0;
    for limit in 1..full.nlp_solves {
        let opts = MinlpOptions {
            node_limit: limit,
            ..MinlpOptions::default()
        };
        match solve_minlp_timestep(&case, cap, 2, MinlpMethod::BranchAndBound, &opts) {
            Ok(step) if step.node_limit_hit => {
                cut_short += 1;
                assert!(step.result.objective_kwh <= full.result.objective_kwh + 1e-6);
            }
            Ok(step) => {
                assert!((step.result.objective_kwh - full.result.objective_kwh).abs() <= 1e-9);
            }
            Err(e) => {
                cut_short += 1;
                assert!(matches!(e, StrategyError::NodeLimitWithoutIncumbent { t: 2 }), "{e}");
            }
        }
    }
    assert!(cut_short > 0);

    // Through the strategy layer a truncated search is flagged in the status.
    let opts = StrategyOptions {
        minlp: MinlpOptions {
            method: MinlpMethod::BranchAndBound,
            node_limit: 1,
            ..MinlpOptions::default()
        },
        ..options()
    };
    match solve_strategy(&case, StrategyId::Cs1, cap, 42, &opts) {
        Ok(out) => assert_eq!(out.result.status, SolveStatus::IterationLimit),
        Err(e) => assert!(matches!(e, StrategyError::NodeLimitWithoutIncumbent { .. }), "{e}"),
    }
}

#[test]
fn symmetric_feeder_is_indifferent_to_the_phase() {
    let case = bundled("symmetric_3node");
    let cap = cap_pu(&case, 5.0);
    let objectives: Vec<f64> = Phase::ALL
        .iter()
        .map(|&ph| {
            let a = PhaseAssignment::uniform(&case, ph);
            let (_, r) = solve_assignment(&case, &a, cap, &options()).unwrap();
            assert_eq!(r.status, SolveStatus::Optimal);
            r.objective_kwh
        })
        .collect();
    for o in &objectives[1..] {
        assert!((o - objectives[0]).abs() <= 1e-8, "{objectives:?}");
    }
}

#[test]
fn enumeration_cap_is_enforced() {
    let mut case = bundled("two_node");
    case.pv_candidates = vec![case.pv_candidates[0].clone(); 7];
    let opts = StrategyOptions {
        minlp: with_method(MinlpMethod::Enumeration),
        ..options()
    };
    let err = solve_strategy(&case, StrategyId::Cs1, 0.368, 42, &opts).unwrap_err();
    assert!(matches!(err, StrategyError::EnumerationCap { pv_nodes: 7, cap: 6 }));
    assert!(err.to_string().contains("branch_and_bound"));
}

#[test]
fn no_candidates_is_an_error() {
    let mut case = bundled("two_node");
    case.pv_candidates.clear();
    let err = solve_strategy(&case, StrategyId::Cs4, 0.368, 42, &options()).unwrap_err();
    assert!(matches!(err, StrategyError::NoPvCandidates));
}

#[test]
fn assignment_csv_round_trips() {
    let case = bundled("star_4node");
    for a in [assign_random_per_step(&case, 3), assign_random_fixed(&case, 3)] {
        let mut buf = Vec::new();
        a.write_csv(&case, &mut buf).unwrap();
        let back = PhaseAssignment::read_csv(&case, buf.as_slice()).unwrap();
        assert_eq!(back, a);
    }
    assert!(PhaseAssignment::read_csv(&case, "pv,t,phase\nzz,0,a\n".as_bytes()).is_err());
}
