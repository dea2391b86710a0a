use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed case file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("malformed load csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid case: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum FormulationError {
    #[error("timestep set is empty")]
    EmptyTimesteps,
    #[error("timestep {t} outside horizon {horizon}")]
    TimestepOutOfRange { t: usize, horizon: usize },
    #[error("assignment references unknown PV candidate {0}")]
    UnknownPv(usize),
    #[error("assignment does not cover PV candidate {pv} at t={t}")]
    IncompleteAssignment { pv: usize, t: usize },
    #[error("pv cap must be positive, got {0}")]
    NonPositiveCap(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error("KKT factorization failed at iteration {iteration}: {detail}")]
    LinearAlgebra {
        iteration: usize,
        detail: String,
        /// Iterate at which the failure occurred.
        x: Vec<f64>,
    },
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error("solve failed at t={t}: {source}")]
    Timestep {
        t: usize,
        #[source]
        source: SolveError,
    },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(
        "enumeration over {pv_nodes} PV nodes exceeds the cap of {cap}; use branch_and_bound"
    )]
    EnumerationCap { pv_nodes: usize, cap: usize },
    #[error("no feasible phase assignment at t={t}")]
    AllBranchesInfeasible { t: usize },
    #[error("node limit reached at t={t} before any feasible assignment was found")]
    NodeLimitWithoutIncumbent { t: usize },
    #[error("case has no PV candidates")]
    NoPvCandidates,
    #[error("malformed assignment csv: {0}")]
    Csv(String),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("sweep did not converge at t={t} after {iterations} iterations (last change {last_change:e})")]
    NonConvergence {
        t: usize,
        iterations: usize,
        last_change: f64,
        history: Vec<f64>,
    },
    #[error("injection schedule shape does not match the case")]
    Shape,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("loss cross-check failed: I2R {i2r:e} vs balance {balance:e}")]
    LossMismatch { i2r: f64, balance: f64 },
    #[error("positive-sequence voltage is zero at node {node}, t={t}")]
    DegenerateVoltage { node: usize, t: usize },
    #[error("no results to report")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(String),
}
