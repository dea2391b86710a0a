use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::network::load_case;

fn bundled(name: &str) -> NetworkCase {
    let path = format!("{}/../../cases/{name}.json", env!("CARGO_MANIFEST_DIR"));
    load_case(path).expect("bundled case loads")
}

fn phase_a(case: &NetworkCase) -> PhaseAssignment {
    PhaseAssignment::uniform(case, Phase::A)
}

fn random_point(problem: &NlpProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..problem.dimension())
        .map(|_| rng.random_range(-1.5..1.5))
        .collect()
}

#[test]
fn hand_count_two_node_single_step() {
    let case = bundled("two_node");
    let a = phase_a(&case);
    let p = build_problem(&case, PvConnection::Assigned(&a), 0.368, &[1]).unwrap();
    // 6 voltage + 12 branch + 6 load current + 12 PV variables.
    assert_eq!(p.dimension(), 36);
    // drop 6, flow 6, load 6, pv 6, kcl 6, thermal 3, band 6, unbalance 1,
    // one cap row for the connected phase.
    assert_eq!(p.n_rows(), 41);
    assert_eq!(p.row_count(RowKind::PvCap), 1);
    assert_eq!(p.row_count(RowKind::Unbalance), 1);
    assert_eq!(p.row_count(RowKind::PhaseSelection), 0);

    // Night step: no cap row, output pinned to zero.
    let night = build_problem(&case, PvConnection::Assigned(&a), 0.368, &[0]).unwrap();
    assert_eq!(night.n_rows(), 40);
}

#[test]
fn unassigned_phases_are_pinned_to_zero() {
    let case = bundled("two_node");
    let a = phase_a(&case);
    let p = build_problem(&case, PvConnection::Assigned(&a), 0.368, &[2]).unwrap();
    for ph in [Phase::B, Phase::C] {
        for kind in [VarKind::PvActive, VarKind::PvReactive] {
            let i = p.vars.get(kind, 0, ph, 2).unwrap();
            assert_eq!((p.lower[i], p.upper[i]), (0.0, 0.0));
            assert!(p
                .bound_rows
                .iter()
                .any(|b| b.var == i && b.kind == BoundKind::PvDisconnected));
        }
    }
    let pa = p.vars.get(VarKind::PvActive, 0, Phase::A, 2).unwrap();
    assert_eq!((p.lower[pa], p.upper[pa]), (0.0, f64::INFINITY));
    let cap_row = p
        .rows
        .iter()
        .find(|r| r.info.kind == RowKind::PvCap)
        .unwrap();
    assert_eq!(cap_row.info.phase, Some(Phase::A));
    // P - 0.368 * curve(2) <= 0 with curve(2) = 1.
    assert_eq!(cap_row.linear, vec![(pa, 1.0)]);
    assert!((cap_row.constant + 0.368).abs() < 1e-15);
}

#[test]
fn relaxed_mode_adds_indicators_and_selection_row() {
    let case = bundled("two_node");
    let free = RelaxationFixings::free();
    let p = build_problem(&case, PvConnection::Relaxed(&free), 0.368, &[1]).unwrap();
    assert_eq!(p.dimension(), 39);
    let xs: Vec<usize> = Phase::ALL
        .iter()
        .map(|&ph| p.vars.get(VarKind::PhaseIndicator, 0, ph, 1).unwrap())
        .collect();
    for &i in &xs {
        assert_eq!((p.lower[i], p.upper[i]), (0.0, 1.0));
        assert!((p.x0[i] - 1.0 / 3.0).abs() < 1e-15);
    }
    assert_eq!(p.row_count(RowKind::PvCap), 3);
    assert_eq!(p.row_count(RowKind::PhaseSelection), 1);
    let sel = p
        .rows
        .iter()
        .find(|r| r.info.kind == RowKind::PhaseSelection)
        .unwrap();
    assert_eq!(sel.linear.len(), 3);
    assert_eq!(sel.constant, -1.0);

    // Fixing one indicator to one removes all of them.
    let mut fix = RelaxationFixings::free();
    fix.fixed.insert((0, 1, Phase::B), true);
    let p = build_problem(&case, PvConnection::Relaxed(&fix), 0.368, &[1]).unwrap();
    assert_eq!(p.dimension(), 36);
    assert_eq!(p.row_count(RowKind::PhaseSelection), 0);
    let pb = p.vars.get(VarKind::PvActive, 0, Phase::B, 1).unwrap();
    assert_eq!(p.upper[pb], f64::INFINITY);
}

#[test]
fn build_rejects_bad_inputs() {
    let case = bundled("two_node");
    let a = phase_a(&case);
    let conn = PvConnection::Assigned(&a);
    assert_eq!(
        build_problem(&case, conn, 0.368, &[]).unwrap_err(),
        FormulationError::EmptyTimesteps
    );
    assert_eq!(
        build_problem(&case, conn, 0.0, &[0]).unwrap_err(),
        FormulationError::NonPositiveCap(0.0)
    );
    assert!(matches!(
        build_problem(&case, conn, 0.368, &[9]).unwrap_err(),
        FormulationError::TimestepOutOfRange { t: 9, .. }
    ));
    let extra = PhaseAssignment::fixed(vec![Phase::A, Phase::B]);
    assert!(matches!(
        build_problem(&case, PvConnection::Assigned(&extra), 0.368, &[0]).unwrap_err(),
        FormulationError::UnknownPv(_)
    ));
    let p = build_problem(&case, conn, 0.368, &[0]).unwrap();
    assert!(matches!(
        p.eval_constraints(&[0.0; 3]).unwrap_err(),
        FormulationError::Dimension { .. }
    ));
}

#[test]
fn flat_start_without_load_satisfies_network_rows() {
    let mut case = bundled("star_4node");
    for load in &mut case.loads {
        for k in 0..3 {
            load.p[k].iter_mut().for_each(|v| *v = 0.0);
            load.q[k].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let a = phase_a(&case);
    let p = build_problem(&case, PvConnection::Assigned(&a), 0.368, &[0, 1]).unwrap();
    let c = p.eval_constraints(&p.x0).unwrap();
    for (row, v) in p.rows.iter().zip(&c) {
        match row.info.kind {
            RowKind::KclRe
            | RowKind::KclIm
            | RowKind::VoltageDropRe
            | RowKind::VoltageDropIm
            | RowKind::LoadActive
            | RowKind::LoadReactive => assert_eq!(*v, 0.0, "{:?}", row.info),
            _ => {}
        }
    }
}

#[test]
fn balanced_voltages_give_strictly_feasible_unbalance_row() {
    let case = bundled("feeder_13node");
    let a = phase_a(&case);
    let p = build_problem(&case, PvConnection::Assigned(&a), 0.368, &[3]).unwrap();
    let c = p.eval_constraints(&p.x0).unwrap();
    let vuf2 = case.limits.vuf_max * case.limits.vuf_max;
    let mut seen = 0;
    for (row, v) in p.rows.iter().zip(&c) {
        if row.info.kind == RowKind::Unbalance {
            // |3 U1|^2 = 9 for a unit balanced set.
            assert!((v + vuf2 * 9.0).abs() < 1e-12, "{v}");
            seen += 1;
        }
    }
    assert_eq!(seen, case.nodes.len() - 1);
}

#[test]
fn jacobian_and_hessian_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let case = bundled("two_node");
    let free = RelaxationFixings::free();
    let p = build_problem(&case, PvConnection::Relaxed(&free), 0.368, &[1, 2]).unwrap();
    let n = p.dimension();
    let h = 1e-6;
    for _ in 0..10 {
        let x = random_point(&p, &mut rng);
        let lam: Vec<f64> = (0..p.n_rows()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let jac = p.eval_jacobian(&x).unwrap().to_dense();
        let hess = p.eval_lagrangian_hessian(&x, &lam, 1.0).unwrap().to_dense_symmetric();
        let grad_l = |x: &[f64]| {
            let j = p.eval_jacobian(x).unwrap();
            let mut g = vec![0.0; n];
            for k in 0..j.nnz() {
                g[j.cols[k]] += j.values[k] * lam[j.rows[k]];
            }
            g
        };
        for col in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += h;
            xm[col] -= h;
            let cp = p.eval_constraints(&xp).unwrap();
            let cm = p.eval_constraints(&xm).unwrap();
            for r in 0..p.n_rows() {
                let fd = (cp[r] - cm[r]) / (2.0 * h);
                assert!((fd - jac[r][col]).abs() <= 1e-6, "J[{r}][{col}]");
            }
            let gp = grad_l(&xp);
            let gm = grad_l(&xm);
            for i in 0..n {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((fd - hess[i][col]).abs() <= 1e-4, "H[{i}][{col}]");
            }
        }
    }
}

#[test]
fn linear_rows_have_no_curvature() {
    let case = bundled("star_4node");
    let a = phase_a(&case);
    let p = build_problem(&case, PvConnection::Assigned(&a), 0.368, &[1]).unwrap();
    for row in &p.rows {
        let linear_kind = matches!(
            row.info.kind,
            RowKind::VoltageDropRe
                | RowKind::VoltageDropIm
                | RowKind::KclRe
                | RowKind::KclIm
                | RowKind::PvCap
                | RowKind::PhaseSelection
        );
        if linear_kind {
            assert!(row.is_linear(), "{:?}", row.info);
        }
    }
    // Only drop rows carry nonzero multipliers: the Hessian vanishes.
    let lam: Vec<f64> = p
        .rows
        .iter()
        .map(|r| matches!(r.info.kind, RowKind::VoltageDropRe | RowKind::VoltageDropIm) as u8 as f64)
        .collect();
    let hess = p.eval_lagrangian_hessian(&p.x0, &lam, 1.0).unwrap();
    assert!(hess.values.iter().all(|&v| v == 0.0));
}

#[test]
fn objective_gradient_is_step_length_on_pv_power() {
    let case = bundled("two_node");
    let a = phase_a(&case);
    let p = build_problem(&case, PvConnection::Assigned(&a), 0.368, &[0, 1, 2, 3]).unwrap();
    let g = p.eval_objective_grad(&p.x0).unwrap();
    for (i, key) in p.vars.keys().iter().enumerate() {
        let expected = if key.kind == VarKind::PvActive { 0.25 } else { 0.0 };
        assert_eq!(g[i], expected, "{key:?}");
    }
    let zero = vec![0.0; p.dimension()];
    assert_eq!(objective_kwh(&p, &zero).unwrap(), 0.0);
}

#[test]
fn constant_output_over_a_day_gives_expected_energy() {
    let mut case = bundled("two_node");
    case.horizon_steps = 96;
    case.pv_candidates[0].curve = vec![1.0; 96];
    for load in &mut case.loads {
        for k in 0..3 {
            load.p[k] = vec![load.p[k][0]; 96];
            load.q[k] = vec![load.q[k][0]; 96];
        }
    }
    let cap = case.base.kw_to_pu(3.68);
    let a = phase_a(&case);
    let steps: Vec<usize> = (0..96).collect();
    let p = build_problem(&case, PvConnection::Assigned(&a), cap, &steps).unwrap();
    let mut x = p.x0.clone();
    for t in 0..96 {
        x[p.vars.get(VarKind::PvActive, 0, Phase::A, t).unwrap()] = cap;
    }
    let kwh = p.objective_kwh(&x).unwrap();
    assert!((kwh - 88.32).abs() < 1e-9, "{kwh}");
}

#[test]
fn flow_rows_agree_with_complex_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let case = bundled("star_4node");
    let a = phase_a(&case);
    let p = build_problem(&case, PvConnection::Assigned(&a), 0.368, &[2]).unwrap();
    for _ in 0..20 {
        let x = random_point(&p, &mut rng);
        let c = p.eval_constraints(&x).unwrap();
        for (row, v) in p.rows.iter().zip(&c) {
            let (flow_kind, part) = match row.info.kind {
                RowKind::BranchActiveFlow => (VarKind::BranchActiveFlow, 0),
                RowKind::BranchReactiveFlow => (VarKind::BranchReactiveFlow, 1),
                _ => continue,
            };
            let br = &case.branches[row.info.entity];
            let ph = row.info.phase.unwrap();
            let u = if br.from_node == 0 {
                let (re, im) = case.slack.voltage(ph);
                Complex64::new(re, im)
            } else {
                let g = |k| x[p.vars.get(k, br.from_node, ph, 2).unwrap()];
                Complex64::new(g(VarKind::VoltageRe), g(VarKind::VoltageIm))
            };
            let g = |k| x[p.vars.get(k, row.info.entity, ph, 2).unwrap()];
            let i = Complex64::new(g(VarKind::BranchCurrentRe), g(VarKind::BranchCurrentIm));
            let s = u * i.conj();
            let expected = if part == 0 { s.re } else { s.im };
            // Row is `flow - expression`.
            let expression = g(flow_kind) - v;
            assert!((expression - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn single_step_problem_is_a_slice_of_the_joint_problem() {
    let case = bundled("star_4node");
    let a = phase_a(&case);
    let joint = build_problem(&case, PvConnection::Assigned(&a), 0.368, &[0, 1, 2, 3]).unwrap();
    let single = build_problem(&case, PvConnection::Assigned(&a), 0.368, &[2]).unwrap();
    let vb = joint.var_blocks[2].clone();
    let rb = joint.row_blocks[2].clone();
    assert_eq!(vb.len(), single.dimension());
    assert_eq!(rb.len(), single.n_rows());
    for (k, i) in vb.clone().enumerate() {
        assert_eq!(joint.vars.key(i), single.vars.key(k));
        assert_eq!(joint.lower[i], single.lower[k]);
        assert_eq!(joint.upper[i], single.upper[k]);
    }
    for (k, r) in rb.enumerate() {
        let (jr, sr) = (&joint.rows[r], &single.rows[k]);
        assert_eq!(jr.info, sr.info);
        assert_eq!(jr.constant, sr.constant);
        let shift = |terms: &[(usize, f64)]| terms.iter().map(|&(i, c)| (i - vb.start, c)).collect::<Vec<_>>();
        assert_eq!(shift(&jr.linear), sr.linear);
    }
}
