//! Command-line driver: solve the requested strategies on one case,
//! validate every solution with the power-flow oracle and write reports.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::error::{CaseError, MetricsError, OracleError, StrategyError};
use crate::metrics::{self, OperatingPoint, OutputOptions, ReportFile, SUMMARY_HEADER};
use crate::network::{load_case, NetworkCase};
use crate::oracle::{self, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE};
use crate::solver::{IterationRecord, SolveStatus, SolverOptions};
use crate::strategy::{
    solve_strategy, Decomposition, MinlpMethod, MinlpOptions, StrategyId, StrategyOptions,
    StrategyOutcome,
};

#[derive(Debug, Parser)]
#[command(name = "phasecap", version, about = "PV hosting capacity with single-phase connection strategies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve strategies on a case and write reports.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogFormat {
    None,
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Case file (JSON).
    #[arg(long)]
    pub case: PathBuf,
    /// Comma-separated strategies out of cs1..cs5.
    #[arg(long, value_delimiter = ',', default_value = "cs1,cs2,cs3,cs4,cs5")]
    pub strategies: Vec<StrategyId>,
    /// PV cap per unit in kW, applied to candidates without their own limit.
    #[arg(long, default_value_t = 3.68)]
    pub pv_cap_kw: f64,
    /// Seed for the random strategies (cs2, cs3).
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// per_timestep or monolithic.
    #[arg(long, default_value = "per_timestep")]
    pub decomposition: Decomposition,
    /// auto, enumeration or branch_and_bound.
    #[arg(long, default_value = "auto")]
    pub minlp_method: MinlpMethod,
    /// Relaxations per timestep before branch and bound gives up.
    #[arg(long, default_value_t = 10_000)]
    pub node_limit: usize,
    /// Largest PV candidate count for enumeration.
    #[arg(long, default_value_t = 6)]
    pub enumeration_cap: usize,
    /// Optimality tolerance of the interior-point solver.
    #[arg(long, default_value_t = 1e-6)]
    pub kkt_tol: f64,
    /// Constraint violation tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub feas_tol: f64,
    /// Iteration limit per continuous solve.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Time limit per continuous solve, seconds.
    #[arg(long)]
    pub time_limit_s: Option<f64>,
    /// Largest accepted OPF vs power-flow voltage difference, p.u.
    #[arg(long, default_value_t = 1e-6)]
    pub oracle_tol: f64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Solver iteration log on stderr.
    #[arg(long, value_enum, default_value_t = LogFormat::None)]
    pub log_format: LogFormat,
    /// Worker threads for independent solves (0: one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Record measured wall time in summary.csv (otherwise "-").
    #[arg(long)]
    pub include_timing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case: PathBuf,
    pub strategies: Vec<StrategyId>,
    pub pv_cap_kw: f64,
    pub seed: u64,
    pub solver: SolverOptions,
    pub decomposition: Decomposition,
    pub minlp: MinlpOptions,
    pub oracle_tolerance: f64,
    pub out_dir: PathBuf,
    pub log_format: LogFormat,
    pub jobs: usize,
    pub include_timing: bool,
}

impl From<RunArgs> for RunConfig {
    fn from(a: RunArgs) -> Self {
        let solver = SolverOptions {
            kkt_tolerance: a.kkt_tol,
            feasibility_tolerance: a.feas_tol,
            max_iterations: a.max_iter,
            time_limit_s: a.time_limit_s,
            record_trace: a.log_format != LogFormat::None,
            ..SolverOptions::default()
        };
        RunConfig {
            case: a.case,
            strategies: a.strategies,
            pv_cap_kw: a.pv_cap_kw,
            seed: a.seed,
            minlp: MinlpOptions {
                method: a.minlp_method,
                node_limit: a.node_limit,
                enumeration_cap: a.enumeration_cap,
                solver: solver.clone(),
            },
            solver,
            decomposition: a.decomposition,
            oracle_tolerance: a.oracle_tol,
            out_dir: a.out,
            log_format: a.log_format,
            jobs: a.jobs,
            include_timing: a.include_timing,
        }
    }
}

impl RunConfig {
    /// Defaults for everything except the case path.
    pub fn new(case: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            case: case.into(),
            strategies: StrategyId::ALL.to_vec(),
            pv_cap_kw: 3.68,
            seed: 42,
            solver: SolverOptions::default(),
            decomposition: Decomposition::PerTimestep,
            minlp: MinlpOptions::default(),
            oracle_tolerance: 1e-6,
            out_dir: out_dir.into(),
            log_format: LogFormat::None,
            jobs: 0,
            include_timing: false,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if !(self.pv_cap_kw > 0.0 && self.pv_cap_kw.is_finite()) {
            return bad(format!("pv cap must be positive, got {}", self.pv_cap_kw));
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if self.minlp.node_limit == 0 {
            return bad("node limit must be positive".into());
        }
        if !(self.oracle_tolerance > 0.0) {
            return bad("oracle tolerance must be positive".into());
        }
        self.solver.validate().map_err(RunError::Config)
    }
}

/// Exit categories of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExitCategory {
    Success = 0,
    Config = 2,
    Solve = 3,
    Validation = 4,
    Io = 5,
}

impl ExitCategory {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("{strategy}: {source}")]
    Strategy {
        strategy: StrategyId,
        #[source]
        source: StrategyError,
    },
    #[error("{strategy}: power-flow validation failed: {source}")]
    Oracle {
        strategy: StrategyId,
        #[source]
        source: OracleError,
    },
    #[error("{strategy}: {source}")]
    Metrics {
        strategy: StrategyId,
        #[source]
        source: MetricsError,
    },
    #[error("writing reports: {0}")]
    Output(#[source] MetricsError),
}

impl RunError {
    pub fn category(&self) -> ExitCategory {
        match self {
            RunError::Config(_) => ExitCategory::Config,
            RunError::Case(CaseError::Io { .. }) => ExitCategory::Io,
            RunError::Case(_) => ExitCategory::Config,
            RunError::Strategy {
                source: StrategyError::EnumerationCap { .. } | StrategyError::NoPvCandidates,
                ..
            } => ExitCategory::Config,
            RunError::Strategy { .. } => ExitCategory::Solve,
            RunError::Oracle { .. } | RunError::Metrics { .. } => ExitCategory::Validation,
            RunError::Output(_) => ExitCategory::Io,
        }
    }
}

/// Result of a completed run; `problems` lists non-fatal failures
/// (non-optimal solves, oracle disagreement) that still produced reports.
#[derive(Debug)]
pub struct RunSummary {
    pub report: ReportFile,
    pub problems: Vec<(ExitCategory, String)>,
}

impl RunSummary {
    /// Highest category among the recorded problems.
    pub fn exit_category(&self) -> ExitCategory {
        self.problems
            .iter()
            .map(|p| p.0)
            .max()
            .unwrap_or(ExitCategory::Success)
    }
}

/// Execute a run. Fatal errors abort before any report is written.
pub fn run(config: &RunConfig) -> Result<RunSummary, RunError> {
    config.validate()?;
    let case = load_case(&config.case)?;
    precheck(&case, config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| RunError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_case(&case, config))
}

fn precheck(case: &NetworkCase, config: &RunConfig) -> Result<(), RunError> {
    let n_pv = case.pv_candidates.len();
    if n_pv == 0 {
        return Err(RunError::Strategy {
            strategy: config.strategies[0],
            source: StrategyError::NoPvCandidates,
        });
    }
    if config.strategies.contains(&StrategyId::Cs1)
        && config.minlp.method == MinlpMethod::Enumeration
        && n_pv > config.minlp.enumeration_cap
    {
        return Err(RunError::Strategy {
            strategy: StrategyId::Cs1,
            source: StrategyError::EnumerationCap {
                pv_nodes: n_pv,
                cap: config.minlp.enumeration_cap,
            },
        });
    }
    Ok(())
}

fn run_case(case: &NetworkCase, config: &RunConfig) -> Result<RunSummary, RunError> {
    let pv_cap = case.base.kw_to_pu(config.pv_cap_kw);
    let options = StrategyOptions {
        solver: config.solver.clone(),
        minlp: config.minlp.clone(),
        decomposition: config.decomposition,
    };
    let mut problems = Vec::new();
    let mut reports = Vec::new();
    let mut outcomes: Vec<StrategyOutcome> = Vec::new();
    for &strategy in &config.strategies {
        let outcome = solve_strategy(case, strategy, pv_cap, config.seed, &options)
            .map_err(|source| RunError::Strategy { strategy, source })?;
        log_trace(config.log_format, strategy, &outcome.result.trace);
        if outcome.result.status != SolveStatus::Optimal {
            problems.push((
                ExitCategory::Solve,
                format!("{strategy}: solver status {}", outcome.result.status.as_str()),
            ));
        }
        let mut report = metrics::build_strategy_report(case, &outcome)
            .map_err(|source| RunError::Metrics { strategy, source })?;
        if outcome.result.status != SolveStatus::Optimal {
            reports.push(report);
            outcomes.push(outcome);
            continue;
        }
        let schedule = metrics::schedule_of(case, &outcome);
        let pf = oracle::sweep_solve(case, &schedule, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)
            .map_err(|source| RunError::Oracle { strategy, source })?;
        let op = OperatingPoint::from_solution(case, &outcome.problem, &outcome.result.x);
        let dev = metrics::oracle_voltage_deviation(&op, &pf);
        report.oracle_max_deviation_pu = Some(dev);
        if dev > config.oracle_tolerance {
            problems.push((
                ExitCategory::Validation,
                format!(
                    "{strategy}: OPF and power-flow voltages differ by {dev:.3e} p.u. (limit {:.1e})",
                    config.oracle_tolerance
                ),
            ));
        }
        reports.push(report);
        outcomes.push(outcome);
    }
    let report = ReportFile {
        case: case.name.clone(),
        pv_cap_kw: config.pv_cap_kw,
        seed: config.seed,
        reports,
    };
    metrics::write_outputs(
        &report,
        &config.out_dir,
        OutputOptions {
            include_timing: config.include_timing,
        },
    )
    .map_err(RunError::Output)?;
    Ok(RunSummary { report, problems })
}

fn log_trace(format: LogFormat, strategy: StrategyId, trace: &[IterationRecord]) {
    let mut err = std::io::stderr().lock();
    match format {
        LogFormat::None => {}
        LogFormat::Text => {
            for r in trace {
                let _ = writeln!(err, "{strategy} {}", r.to_text());
            }
        }
        LogFormat::Csv => {
            let _ = writeln!(err, "strategy,{}", IterationRecord::CSV_HEADER);
            for r in trace {
                let _ = writeln!(err, "{strategy},{}", r.to_csv());
            }
        }
    }
}

/// Fixed-width table in `summary.csv` column order, with measured times.
pub fn render_table(report: &ReportFile) -> String {
    let rows = metrics::summary_rows(&report.reports, OutputOptions { include_timing: true });
    let mut widths: Vec<usize> = SUMMARY_HEADER.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let header: Vec<String> = SUMMARY_HEADER.iter().map(|s| s.to_string()).collect();
    let mut out = format!(
        "case {}  pv cap {} kW  seed {}\n",
        report.case, report.pv_cap_kw, report.seed
    );
    out.push_str(&line(&header));
    out.push('\n');
    for row in &rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}
