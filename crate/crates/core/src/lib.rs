//! Single-phase PV hosting capacity on unbalanced radial LV feeders.
//!
//! A three-phase current-voltage OPF maximizes PV energy subject to
//! thermal, voltage and unbalance limits. Five strategies decide which
//! phase each PV unit connects to; an independent backward-forward sweep
//! validates every solution.

pub mod cli;
pub mod error;
pub mod formulation;
pub mod metrics;
pub mod network;
pub mod oracle;
pub mod solver;
pub mod strategy;
pub mod unbalance;

pub use error::{CaseError, FormulationError, MetricsError, OracleError, SolveError, StrategyError};
pub use network::{load_case, NetworkCase, Phase};
