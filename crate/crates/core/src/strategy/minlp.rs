//! Exact phase selection: per-timestep enumeration or branch and bound on
//! the relaxed indicators.

use std::collections::HashMap;
use std::rc::Rc;

use rayon::prelude::*;

use super::{concatenate, map_start, MinlpMethod, MinlpOptions, PhaseAssignment};
use crate::error::StrategyError;
use crate::formulation::{
    build_problem, IndicatorStatus, NlpProblem, PvConnection, RelaxationFixings, VarKind,
};
use crate::network::{NetworkCase, Phase};
use crate::solver::{self, SolveResult, SolveStatus};

/// Improvement needed to replace the incumbent; smaller gains keep the
/// lexicographically earlier assignment.
const TIE_KWH: f64 = 1e-9;
/// Relaxation bound margin below the incumbent before a node is pruned.
const PRUNE_KWH: f64 = 1e-9;
const INTEGRALITY_TOL: f64 = 1e-6;

/// Outcome of the phase search at one timestep.
#[derive(Debug, Clone)]
pub struct MinlpStep {
    pub t: usize,
    pub phases: Vec<Phase>,
    pub result: SolveResult,
    /// Continuous problems solved (relaxations and fixed-assignment solves).
    pub nlp_solves: usize,
    pub node_limit_hit: bool,
}

fn resolve_method(case: &NetworkCase, options: &MinlpOptions) -> Result<MinlpMethod, StrategyError> {
    let n_pv = case.pv_candidates.len();
    match options.method {
        MinlpMethod::Auto if n_pv <= options.enumeration_cap => Ok(MinlpMethod::Enumeration),
        MinlpMethod::Auto => Ok(MinlpMethod::BranchAndBound),
        MinlpMethod::Enumeration if n_pv > options.enumeration_cap => {
            Err(StrategyError::EnumerationCap {
                pv_nodes: n_pv,
                cap: options.enumeration_cap,
            })
        }
        m => Ok(m),
    }
}

/// Best single-phase assignment for every timestep, with the aggregated
/// result over the full horizon.
pub fn solve_minlp(
    case: &NetworkCase,
    pv_cap: f64,
    options: &MinlpOptions,
) -> Result<(SolveResult, PhaseAssignment), StrategyError> {
    if case.pv_candidates.is_empty() {
        return Err(StrategyError::NoPvCandidates);
    }
    let method = resolve_method(case, options)?;
    let steps: Vec<usize> = (0..case.horizon_steps).collect();
    let parts = steps
        .par_iter()
        .map(|&t| solve_minlp_timestep(case, pv_cap, t, method, options))
        .collect::<Result<Vec<_>, _>>()?;
    let n_pv = case.pv_candidates.len();
    let choice = (0..n_pv)
        .map(|pv| parts.iter().map(|s| s.phases[pv]).collect())
        .collect();
    let assignment = PhaseAssignment::per_timestep(choice);
    let hit = parts.iter().any(|s| s.node_limit_hit);
    let joint = build_problem(case, PvConnection::Assigned(&assignment), pv_cap, &steps)?;
    let mut result = concatenate(&joint, parts.into_iter().map(|s| s.result).collect());
    if hit {
        result.status = result.status.worst(SolveStatus::IterationLimit);
    }
    Ok((result, assignment))
}

/// Phase search at a single timestep with an explicit method.
pub fn solve_minlp_timestep(
    case: &NetworkCase,
    pv_cap: f64,
    t: usize,
    method: MinlpMethod,
    options: &MinlpOptions,
) -> Result<MinlpStep, StrategyError> {
    let method = match method {
        MinlpMethod::Auto => resolve_method(case, options)?,
        m => m,
    };
    match method {
        MinlpMethod::BranchAndBound => branch_and_bound(case, pv_cap, t, options),
        _ => enumerate(case, pv_cap, t, options),
    }
}

fn solve_fixed(
    case: &NetworkCase,
    pv_cap: f64,
    t: usize,
    phases: &[Phase],
    options: &MinlpOptions,
    start: Option<(&NlpProblem, &[f64])>,
) -> Result<SolveResult, StrategyError> {
    let assignment = PhaseAssignment::fixed(phases.to_vec());
    let problem = build_problem(case, PvConnection::Assigned(&assignment), pv_cap, &[t])?;
    let x0 = start.map(|(p, x)| map_start(p, x, &problem));
    solver::solve_from(&problem, &options.solver, x0.as_deref())
        .map_err(|source| StrategyError::Timestep { t, source })
}

/// Candidates with no available power at `t` get a single choice: every
/// phase yields the same problem.
fn phase_choices(case: &NetworkCase, pv_cap: f64, t: usize) -> Vec<Vec<Phase>> {
    case.pv_candidates
        .iter()
        .map(|pv| {
            if pv.effective_cap(pv_cap) * pv.curve[t] > 0.0 {
                Phase::ALL.to_vec()
            } else {
                vec![Phase::A]
            }
        })
        .collect()
}

fn enumerate(
    case: &NetworkCase,
    pv_cap: f64,
    t: usize,
    options: &MinlpOptions,
) -> Result<MinlpStep, StrategyError> {
    let choices = phase_choices(case, pv_cap, t);
    // Lexicographic product, first candidate most significant.
    let mut combos: Vec<Vec<Phase>> = vec![Vec::new()];
    for opts in &choices {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                opts.iter().map(move |&p| {
                    let mut c = prefix.clone();
                    c.push(p);
                    c
                })
            })
            .collect();
    }
    let solved = combos
        .par_iter()
        .map(|combo| solve_fixed(case, pv_cap, t, combo, options, None))
        .collect::<Result<Vec<_>, _>>()?;
    let nlp_solves = solved.len();
    let mut best: Option<(Vec<Phase>, SolveResult)> = None;
    for (combo, res) in combos.into_iter().zip(solved) {
        if res.status != SolveStatus::Optimal {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, b)) => res.objective_kwh > b.objective_kwh + TIE_KWH,
        };
        if better {
            best = Some((combo, res));
        }
    }
    let (phases, result) = best.ok_or(StrategyError::AllBranchesInfeasible { t })?;
    Ok(MinlpStep {
        t,
        phases,
        result,
        nlp_solves,
        node_limit_hit: false,
    })
}

struct Node {
    fixings: RelaxationFixings,
    parent: Option<(Rc<NlpProblem>, Rc<Vec<f64>>)>,
}

fn branch_and_bound(
    case: &NetworkCase,
    pv_cap: f64,
    t: usize,
    options: &MinlpOptions,
) -> Result<MinlpStep, StrategyError> {
    let n_pv = case.pv_candidates.len();
    let mut stack = vec![Node {
        fixings: RelaxationFixings::free(),
        parent: None,
    }];
    let mut incumbent: Option<(Vec<Phase>, SolveResult)> = None;
    let mut leaves: HashMap<Vec<Phase>, Option<f64>> = HashMap::new();
    let mut nodes = 0usize;
    let mut nlp_solves = 0usize;
    let mut node_limit_hit = false;

    while let Some(node) = stack.pop() {
        if nodes >= options.node_limit {
            node_limit_hit = true;
            break;
        }
        nodes += 1;
        let problem = build_problem(case, PvConnection::Relaxed(&node.fixings), pv_cap, &[t])?;
        let x0 = node
            .parent
            .as_ref()
            .map(|(p, x)| map_start(p, x, &problem));
        let relaxed = solver::solve_from(&problem, &options.solver, x0.as_deref())
            .map_err(|source| StrategyError::Timestep { t, source })?;
        nlp_solves += 1;
        if relaxed.status != SolveStatus::Optimal {
            continue;
        }
        if let Some((_, inc)) = &incumbent {
            if relaxed.objective_kwh <= inc.objective_kwh - PRUNE_KWH {
                continue;
            }
        }

        // Most fractional free indicator; ties go to the earliest (pv, phase).
        let mut branch: Option<(usize, Phase, f64)> = None;
        for pv in 0..n_pv {
            for ph in Phase::ALL {
                if let Some(i) = problem.vars.get(VarKind::PhaseIndicator, pv, ph, t) {
                    let frac = relaxed.x[i].min(1.0 - relaxed.x[i]);
                    if frac > INTEGRALITY_TOL && branch.is_none_or(|b| frac > b.2) {
                        branch = Some((pv, ph, frac));
                    }
                }
            }
        }

        let problem = Rc::new(problem);
        let x = Rc::new(relaxed.x);
        match branch {
            None => {
                let phases: Vec<Phase> = (0..n_pv)
                    .map(|pv| integral_phase(&problem, &x, &node.fixings, pv, t))
                    .collect();
                if leaves.contains_key(&phases) {
                    continue;
                }
                let res = solve_fixed(case, pv_cap, t, &phases, options, Some((&problem, &x)))?;
                nlp_solves += 1;
                let feasible = res.status == SolveStatus::Optimal;
                leaves.insert(phases.clone(), feasible.then_some(res.objective_kwh));
                if !feasible {
                    continue;
                }
                let better = match &incumbent {
                    None => true,
                    Some((inc_phases, inc)) => {
                        res.objective_kwh > inc.objective_kwh + TIE_KWH
                            || (res.objective_kwh >= inc.objective_kwh - TIE_KWH
                                && phases < *inc_phases)
                    }
                };
                if better {
                    incumbent = Some((phases, res));
                }
            }
            Some((pv, ph, _)) => {
                let mut zero = node.fixings.clone();
                zero.fixed.insert((pv, t, ph), false);
                let statuses = zero.statuses(pv, t);
                let free: Vec<Phase> = Phase::ALL
                    .into_iter()
                    .filter(|p| statuses[p.index()] == IndicatorStatus::Free)
                    .collect();
                if free.len() == 1 && !statuses.contains(&IndicatorStatus::One) {
                    zero.fixed.insert((pv, t, free[0]), true);
                }
                let mut one = node.fixings.clone();
                one.fixed.insert((pv, t, ph), true);
                let parent = Some((problem.clone(), x.clone()));
                stack.push(Node {
                    fixings: zero,
                    parent: parent.clone(),
                });
                stack.push(Node {
                    fixings: one,
                    parent,
                });
            }
        }
    }

    let (phases, mut result) = match incumbent {
        Some(inc) => inc,
        None if node_limit_hit => return Err(StrategyError::NodeLimitWithoutIncumbent { t }),
        None => return Err(StrategyError::AllBranchesInfeasible { t }),
    };
    if node_limit_hit {
        result.status = result.status.worst(SolveStatus::IterationLimit);
    }
    Ok(MinlpStep {
        t,
        phases,
        result,
        nlp_solves,
        node_limit_hit,
    })
}

/// Phase of `pv` at an integral relaxation point: the phase fixed or
/// relaxed to one, otherwise the first phase not excluded.
fn integral_phase(
    problem: &NlpProblem,
    x: &[f64],
    fixings: &RelaxationFixings,
    pv: usize,
    t: usize,
) -> Phase {
    let statuses = fixings.statuses(pv, t);
    if let Some(p) = Phase::ALL
        .into_iter()
        .find(|p| statuses[p.index()] == IndicatorStatus::One)
    {
        return p;
    }
    if let Some(p) = Phase::ALL.into_iter().find(|&p| {
        problem
            .vars
            .get(VarKind::PhaseIndicator, pv, p, t)
            .is_some_and(|i| x[i] > 0.5)
    }) {
        return p;
    }
    Phase::ALL
        .into_iter()
        .find(|p| statuses[p.index()] != IndicatorStatus::Zero)
        .unwrap_or(Phase::A)
}
