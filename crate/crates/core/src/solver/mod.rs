//! Primal-dual interior-point solver for [`NlpProblem`] and a KKT checker.

mod ipm;
pub mod ldl;

use serde::{Deserialize, Serialize};

use crate::error::FormulationError;
use crate::formulation::NlpProblem;

pub use ipm::{solve, solve_from};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub kkt_tolerance: f64,
    pub feasibility_tolerance: f64,
    pub max_iterations: usize,
    pub initial_barrier: f64,
    pub time_limit_s: Option<f64>,
    /// Keep one [`IterationRecord`] per iteration in the result.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kkt_tolerance: 1e-6,
            feasibility_tolerance: 1e-6,
            max_iterations: 500,
            initial_barrier: 0.1,
            time_limit_s: None,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.kkt_tolerance > 0.0 && self.feasibility_tolerance > 0.0) {
            return Err("solver tolerances must be positive".into());
        }
        if !(self.initial_barrier > 0.0) {
            return Err("initial barrier must be positive".into());
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be positive".into());
        }
        if let Some(t) = self.time_limit_s {
            if !(t > 0.0) {
                return Err("time limit must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    TimeLimit,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::IterationLimit => "iteration_limit",
            SolveStatus::TimeLimit => "time_limit",
        }
    }

    /// Combine statuses of independent sub-solves: the worst one wins.
    pub fn worst(self, other: SolveStatus) -> SolveStatus {
        let rank = |s: SolveStatus| match s {
            SolveStatus::Optimal => 0,
            SolveStatus::IterationLimit => 1,
            SolveStatus::TimeLimit => 2,
            SolveStatus::Infeasible => 3,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }
}

/// Lagrange multipliers: one per constraint row (nonnegative on `g <= 0`
/// rows) and one per finite variable bound.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Multipliers {
    pub constraints: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub infeasibility: f64,
    pub mu: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    pub regularization: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str = "iteration,objective,infeasibility,mu,alpha_primal,alpha_dual,regularization";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.iteration,
            self.objective,
            self.infeasibility,
            self.mu,
            self.alpha_primal,
            self.alpha_dual,
            self.regularization
        )
    }

    pub fn to_text(&self) -> String {
        format!(
            "iter {:4}  obj {:+.8e}  inf {:.3e}  mu {:.1e}  a_p {:.3e}  a_d {:.3e}  reg {:.1e}",
            self.iteration,
            self.objective,
            self.infeasibility,
            self.mu,
            self.alpha_primal,
            self.alpha_dual,
            self.regularization
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective_kwh: f64,
    pub multipliers: Multipliers,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub trace: Vec<IterationRecord>,
}

/// Residual norms (infinity norm) of the first-order optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub tolerance: f64,
}

impl KktReport {
    pub fn max_norm(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }

    pub fn within_tolerance(&self) -> bool {
        self.max_norm() <= self.tolerance
    }
}

/// Evaluate the KKT conditions of the energy-maximization problem (posed as
/// minimization of negative energy) at `(x, multipliers)`.
pub fn check_kkt(
    problem: &NlpProblem,
    x: &[f64],
    multipliers: &Multipliers,
    tolerance: f64,
) -> Result<KktReport, FormulationError> {
    let n = problem.dimension();
    let m = problem.n_rows();
    let dims = [
        (x.len(), n),
        (multipliers.constraints.len(), m),
        (multipliers.lower.len(), n),
        (multipliers.upper.len(), n),
    ];
    for (got, expected) in dims {
        if got != expected {
            return Err(FormulationError::Dimension { expected, got });
        }
    }
    let c = problem.eval_constraints(x)?;
    let jac = problem.eval_jacobian(x)?;
    let mut grad = vec![0.0; n];
    for &(i, w) in &problem.objective {
        grad[i] -= w;
    }
    for k in 0..jac.nnz() {
        grad[jac.cols[k]] += jac.values[k] * multipliers.constraints[jac.rows[k]];
    }
    let mut stationarity: f64 = 0.0;
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut compl: f64 = 0.0;
    for i in 0..n {
        let (lo, hi) = (problem.lower[i], problem.upper[i]);
        primal = primal.max(lo - x[i]).max(x[i] - hi);
        if lo == hi {
            continue;
        }
        let g = grad[i] - multipliers.lower[i] + multipliers.upper[i];
        stationarity = stationarity.max(g.abs());
        dual = dual.max(-multipliers.lower[i]).max(-multipliers.upper[i]);
        if lo.is_finite() {
            compl = compl.max((multipliers.lower[i] * (x[i] - lo)).abs());
        }
        if hi.is_finite() {
            compl = compl.max((multipliers.upper[i] * (hi - x[i])).abs());
        }
    }
    for (r, row) in problem.rows.iter().enumerate() {
        if row.is_equality() {
            primal = primal.max(c[r].abs());
        } else {
            primal = primal.max(c[r]);
            dual = dual.max(-multipliers.constraints[r]);
            compl = compl.max((multipliers.constraints[r] * c[r]).abs());
        }
    }
    Ok(KktReport {
        stationarity,
        primal: primal.max(0.0),
        dual: dual.max(0.0),
        complementarity: compl,
        tolerance,
    })
}

/// Largest violation of any row or variable bound at `x`.
pub fn max_violation(problem: &NlpProblem, x: &[f64]) -> f64 {
    let mut c = vec![0.0; problem.n_rows()];
    problem.constraints_into(x, &mut c);
    let rows = problem.rows.iter().zip(&c).map(|(row, &v)| {
        if row.is_equality() {
            v.abs()
        } else {
            v.max(0.0)
        }
    });
    let bounds = (0..problem.dimension())
        .map(|i| (problem.lower[i] - x[i]).max(x[i] - problem.upper[i]).max(0.0));
    rows.chain(bounds).fold(0.0, f64::max)
}
