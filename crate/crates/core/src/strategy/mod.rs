//! The five phase-assignment strategies and their solve drivers.
//!
//! CS1 searches over connection phases (exhaustively or by branch and
//! bound); CS2 to CS5 fix the assignment first and solve one continuous
//! problem. Timesteps only interact through the summed objective, so every
//! strategy solves them independently unless monolithic mode is requested.

mod assignment;
mod minlp;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use assignment::{
    assign_most_loaded_per_step, assign_peak_energy_fixed, assign_random_fixed,
    assign_random_per_step, first_argmax, AssignmentMode, PhaseAssignment,
};
pub use minlp::{solve_minlp, solve_minlp_timestep, MinlpStep};

use crate::error::StrategyError;
use crate::formulation::{build_problem, NlpProblem, PvConnection};
use crate::network::NetworkCase;
use crate::solver::{self, Multipliers, SolveResult, SolveStatus, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyId {
    #[serde(rename = "CS1")]
    Cs1,
    #[serde(rename = "CS2")]
    Cs2,
    #[serde(rename = "CS3")]
    Cs3,
    #[serde(rename = "CS4")]
    Cs4,
    #[serde(rename = "CS5")]
    Cs5,
}

impl StrategyId {
    pub const ALL: [StrategyId; 5] = [
        StrategyId::Cs1,
        StrategyId::Cs2,
        StrategyId::Cs3,
        StrategyId::Cs4,
        StrategyId::Cs5,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::Cs1 => "CS1",
            StrategyId::Cs2 => "CS2",
            StrategyId::Cs3 => "CS3",
            StrategyId::Cs4 => "CS4",
            StrategyId::Cs5 => "CS5",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            StrategyId::Cs1 => "optimal phase per step (mixed-integer)",
            StrategyId::Cs2 => "random phase per step",
            StrategyId::Cs3 => "random fixed phase",
            StrategyId::Cs4 => "most loaded phase per step",
            StrategyId::Cs5 => "highest-demand fixed phase",
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cs1" => Ok(StrategyId::Cs1),
            "cs2" => Ok(StrategyId::Cs2),
            "cs3" => Ok(StrategyId::Cs3),
            "cs4" => Ok(StrategyId::Cs4),
            "cs5" => Ok(StrategyId::Cs5),
            other => Err(format!(
                "unknown strategy '{other}'; valid names: cs1, cs2, cs3, cs4, cs5"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinlpMethod {
    /// Enumeration up to the cap, branch and bound beyond it.
    Auto,
    Enumeration,
    BranchAndBound,
}

impl FromStr for MinlpMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "auto" => Ok(MinlpMethod::Auto),
            "enumeration" => Ok(MinlpMethod::Enumeration),
            "branch_and_bound" | "bnb" => Ok(MinlpMethod::BranchAndBound),
            other => Err(format!(
                "unknown MINLP method '{other}'; valid: auto, enumeration, branch_and_bound"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinlpOptions {
    pub method: MinlpMethod,
    /// Relaxations solved per timestep before branch and bound stops.
    pub node_limit: usize,
    /// Largest number of PV candidates for which enumeration is allowed.
    pub enumeration_cap: usize,
    pub solver: SolverOptions,
}

impl Default for MinlpOptions {
    fn default() -> Self {
        MinlpOptions {
            method: MinlpMethod::Auto,
            node_limit: 10_000,
            enumeration_cap: 6,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposition {
    #[default]
    PerTimestep,
    Monolithic,
}

impl FromStr for Decomposition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "per_timestep" => Ok(Decomposition::PerTimestep),
            "monolithic" => Ok(Decomposition::Monolithic),
            other => Err(format!(
                "unknown decomposition '{other}'; valid: per_timestep, monolithic"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StrategyOptions {
    pub solver: SolverOptions,
    pub minlp: MinlpOptions,
    pub decomposition: Decomposition,
}

/// A solved strategy: the assignment used, the full-horizon problem built
/// from it, and the (possibly aggregated) result whose `x` lives in that
/// problem's variable space.
#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub strategy: StrategyId,
    pub assignment: PhaseAssignment,
    pub problem: NlpProblem,
    pub result: SolveResult,
}

/// Run one strategy end to end. `pv_cap` is in per-unit.
pub fn solve_strategy(
    case: &NetworkCase,
    strategy: StrategyId,
    pv_cap: f64,
    seed: u64,
    options: &StrategyOptions,
) -> Result<StrategyOutcome, StrategyError> {
    if case.pv_candidates.is_empty() {
        return Err(StrategyError::NoPvCandidates);
    }
    let started = Instant::now();
    let assignment = match strategy {
        StrategyId::Cs1 => {
            let mut minlp = options.minlp.clone();
            minlp.solver = options.solver.clone();
            let (result, assignment) = solve_minlp(case, pv_cap, &minlp)?;
            let problem = full_problem(case, &assignment, pv_cap)?;
            let result = match options.decomposition {
                Decomposition::PerTimestep => result,
                Decomposition::Monolithic => solve_monolithic(&problem, &options.solver)?,
            };
            return Ok(StrategyOutcome {
                strategy,
                assignment,
                problem,
                result: with_wall_time(result, started),
            });
        }
        StrategyId::Cs2 => assign_random_per_step(case, seed),
        StrategyId::Cs3 => assign_random_fixed(case, seed),
        StrategyId::Cs4 => assign_most_loaded_per_step(case),
        StrategyId::Cs5 => assign_peak_energy_fixed(case),
    };
    let (problem, result) = solve_assignment(case, &assignment, pv_cap, options)?;
    Ok(StrategyOutcome {
        strategy,
        assignment,
        problem,
        result: with_wall_time(result, started),
    })
}

/// Solve the OPF for a given assignment over the full horizon.
pub fn solve_assignment(
    case: &NetworkCase,
    assignment: &PhaseAssignment,
    pv_cap: f64,
    options: &StrategyOptions,
) -> Result<(NlpProblem, SolveResult), StrategyError> {
    let problem = full_problem(case, assignment, pv_cap)?;
    let result = match options.decomposition {
        Decomposition::Monolithic => solve_monolithic(&problem, &options.solver)?,
        Decomposition::PerTimestep => {
            let steps: Vec<usize> = (0..case.horizon_steps).collect();
            let parts = steps
                .par_iter()
                .map(|&t| {
                    let p = build_problem(case, PvConnection::Assigned(assignment), pv_cap, &[t])?;
                    solver::solve(&p, &options.solver)
                        .map_err(|source| StrategyError::Timestep { t, source })
                })
                .collect::<Result<Vec<_>, _>>()?;
            concatenate(&problem, parts)
        }
    };
    Ok((problem, result))
}

fn full_problem(
    case: &NetworkCase,
    assignment: &PhaseAssignment,
    pv_cap: f64,
) -> Result<NlpProblem, StrategyError> {
    let steps: Vec<usize> = (0..case.horizon_steps).collect();
    Ok(build_problem(case, PvConnection::Assigned(assignment), pv_cap, &steps)?)
}

fn solve_monolithic(problem: &NlpProblem, options: &SolverOptions) -> Result<SolveResult, StrategyError> {
    Ok(solver::solve(problem, options)?)
}

fn with_wall_time(mut result: SolveResult, started: Instant) -> SolveResult {
    result.wall_time_s = started.elapsed().as_secs_f64();
    result
}

/// Stitch per-timestep results (in timestep order) into a result for the
/// joint problem, whose layout is the concatenation of the blocks.
pub fn concatenate(joint: &NlpProblem, parts: Vec<SolveResult>) -> SolveResult {
    let mut status = SolveStatus::Optimal;
    let mut x = Vec::with_capacity(joint.dimension());
    let mut multipliers = Multipliers::default();
    let mut objective_kwh = 0.0;
    let mut kkt_residual: f64 = 0.0;
    let mut iterations = 0;
    let mut wall_time_s = 0.0;
    let mut trace = Vec::new();
    for part in parts {
        status = status.worst(part.status);
        x.extend_from_slice(&part.x);
        multipliers.constraints.extend_from_slice(&part.multipliers.constraints);
        multipliers.lower.extend_from_slice(&part.multipliers.lower);
        multipliers.upper.extend_from_slice(&part.multipliers.upper);
        objective_kwh += part.objective_kwh;
        kkt_residual = kkt_residual.max(part.kkt_residual);
        iterations += part.iterations;
        wall_time_s += part.wall_time_s;
        trace.extend(part.trace);
    }
    assert_eq!(x.len(), joint.dimension(), "per-timestep blocks must tile the joint layout");
    let max_violation = solver::max_violation(joint, &x);
    SolveResult {
        status,
        x,
        objective_kwh,
        multipliers,
        kkt_residual,
        max_violation,
        iterations,
        wall_time_s,
        trace,
    }
}

/// Carry values from one problem's variable space to another's by symbolic
/// key; variables absent from `from` keep `to`'s initial value.
pub fn map_start(from: &NlpProblem, x: &[f64], to: &NlpProblem) -> Vec<f64> {
    let mut out = to.x0.clone();
    for (i, key) in to.vars.keys().iter().enumerate() {
        if let Some(j) = from.vars.index_of(key) {
            out[i] = x[j];
        }
    }
    out
}
