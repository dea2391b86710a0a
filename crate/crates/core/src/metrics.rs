//! Losses, voltage and unbalance statistics, and the report files.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::formulation::{NlpProblem, VarKind};
use crate::network::{NetworkCase, Phase};
use crate::oracle::{InjectionSchedule, PfSolution};
use crate::solver::SolveStatus;
use crate::strategy::StrategyOutcome;
use crate::unbalance;

/// Relative tolerance of the loss cross-check.
pub const LOSS_CHECK_TOL: f64 = 1e-8;

/// Complex network state over a set of timesteps, from either an OPF
/// solution or a power-flow run. Entries are indexed by position in
/// `timesteps`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub timesteps: Vec<usize>,
    /// `[k][node][phase]`, slack included.
    pub voltages: Vec<Vec<[Complex64; 3]>>,
    /// `[k][branch][phase]`.
    pub branch_currents: Vec<Vec<[Complex64; 3]>>,
    /// Net current drawn at each node, load minus PV, `[k][node][phase]`.
    pub node_currents: Vec<Vec<[Complex64; 3]>>,
}

impl OperatingPoint {
    pub fn from_solution(case: &NetworkCase, problem: &NlpProblem, x: &[f64]) -> Self {
        let n_nodes = case.nodes.len();
        let mut voltages = Vec::new();
        let mut branch_currents = Vec::new();
        let mut node_currents = Vec::new();
        let value = |kind, entity, ph, t| problem.vars.get(kind, entity, ph, t).map_or(0.0, |i| x[i]);
        let slack = slack_voltages(case);
        for &t in &problem.timesteps {
            let mut v = vec![slack; n_nodes];
            for (node, vn) in v.iter_mut().enumerate().skip(1) {
                for ph in Phase::ALL {
                    vn[ph.index()] = Complex64::new(
                        value(VarKind::VoltageRe, node, ph, t),
                        value(VarKind::VoltageIm, node, ph, t),
                    );
                }
            }
            let j = (0..case.branches.len())
                .map(|b| {
                    Phase::ALL.map(|ph| {
                        Complex64::new(
                            value(VarKind::BranchCurrentRe, b, ph, t),
                            value(VarKind::BranchCurrentIm, b, ph, t),
                        )
                    })
                })
                .collect();
            let mut net = vec![[Complex64::default(); 3]; n_nodes];
            for load in &case.loads {
                for ph in Phase::ALL {
                    net[load.node][ph.index()] += Complex64::new(
                        value(VarKind::LoadCurrentRe, load.node, ph, t),
                        value(VarKind::LoadCurrentIm, load.node, ph, t),
                    );
                }
            }
            for (pv, cand) in case.pv_candidates.iter().enumerate() {
                for ph in Phase::ALL {
                    net[cand.node][ph.index()] -= Complex64::new(
                        value(VarKind::PvCurrentRe, pv, ph, t),
                        value(VarKind::PvCurrentIm, pv, ph, t),
                    );
                }
            }
            voltages.push(v);
            branch_currents.push(j);
            node_currents.push(net);
        }
        OperatingPoint {
            timesteps: problem.timesteps.clone(),
            voltages,
            branch_currents,
            node_currents,
        }
    }

    pub fn from_power_flow(case: &NetworkCase, pf: &PfSolution) -> Self {
        let node_currents = pf
            .currents
            .iter()
            .map(|j| {
                let mut net = vec![[Complex64::default(); 3]; case.nodes.len()];
                for (b, br) in case.branches.iter().enumerate() {
                    for k in 0..3 {
                        net[br.to_node][k] += j[b][k];
                        net[br.from_node][k] -= j[b][k];
                    }
                }
                net[case.slack_node()] = [Complex64::default(); 3];
                net
            })
            .collect();
        OperatingPoint {
            timesteps: (0..pf.voltages.len()).collect(),
            voltages: pf.voltages.clone(),
            branch_currents: pf.currents.clone(),
            node_currents,
        }
    }
}

fn slack_voltages(case: &NetworkCase) -> [Complex64; 3] {
    Phase::ALL.map(|ph| {
        let (re, im) = case.slack.voltage(ph);
        Complex64::new(re, im)
    })
}

/// Losses per listed timestep in kWh, from the branch currents and the
/// resistance matrices.
pub fn losses_per_t_kwh(case: &NetworkCase, op: &OperatingPoint) -> Vec<f64> {
    let to_kwh = case.step_hours * case.base.power_kva;
    op.branch_currents
        .iter()
        .map(|j| {
            let mut p = 0.0;
            for (b, br) in case.branches.iter().enumerate() {
                for a in 0..3 {
                    for c in 0..3 {
                        p += br.resistance[a][c] * (j[b][a].conj() * j[b][c]).re;
                    }
                }
            }
            p * to_kwh
        })
        .collect()
}

/// Losses as slack infeed minus net consumption (load minus PV), kWh.
pub fn balance_losses_kwh(case: &NetworkCase, op: &OperatingPoint) -> f64 {
    let to_kwh = case.step_hours * case.base.power_kva;
    let slack = case.slack_node();
    let mut total = 0.0;
    for k in 0..op.timesteps.len() {
        let v = &op.voltages[k];
        let mut infeed = 0.0;
        for &b in case.child_branches(slack) {
            for ph in 0..3 {
                infeed += (v[slack][ph] * op.branch_currents[k][b][ph].conj()).re;
            }
        }
        let mut drawn = 0.0;
        for (node, i) in op.node_currents[k].iter().enumerate() {
            if node == slack {
                continue;
            }
            for ph in 0..3 {
                drawn += (v[node][ph] * i[ph].conj()).re;
            }
        }
        total += (infeed - drawn) * to_kwh;
    }
    total
}

/// Total losses in kWh, cross-checked against the energy balance.
pub fn total_losses_kwh(case: &NetworkCase, op: &OperatingPoint) -> Result<f64, MetricsError> {
    let i2r: f64 = losses_per_t_kwh(case, op).iter().sum();
    let balance = balance_losses_kwh(case, op);
    if (i2r - balance).abs() > LOSS_CHECK_TOL * i2r.abs().max(1.0) {
        return Err(MetricsError::LossMismatch { i2r, balance });
    }
    Ok(i2r)
}

/// Voltage unbalance factor in percent at `(node, timesteps[k])`.
pub fn vuf_percent(op: &OperatingPoint, node: usize, k: usize) -> Result<f64, MetricsError> {
    let v = &op.voltages[k][node];
    let u = [v[0].re, v[0].im, v[1].re, v[1].im, v[2].re, v[2].im];
    unbalance::unbalance_factor(&u)
        .map(|f| 100.0 * f)
        .ok_or(MetricsError::DegenerateVoltage {
            node,
            t: op.timesteps[k],
        })
}

/// Box-plot summary: quartiles by linear interpolation, whiskers at the
/// most extreme samples within 1.5 IQR of the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers_below: usize,
    pub outliers_above: usize,
}

impl BoxStats {
    pub fn from_samples(samples: &[f64]) -> Option<BoxStats> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (s.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(s.len() - 1);
            s[lo] + (h - lo as f64) * (s[hi] - s[lo])
        };
        let (q1, median, q3) = (q(0.25), q(0.5), q(0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = s
            .iter()
            .copied()
            .filter(|&v| v >= lo_fence && v <= hi_fence)
            .collect();
        Some(BoxStats {
            min: s[0],
            q1,
            median,
            q3,
            max: s[s.len() - 1],
            whisker_low: inside.first().copied().unwrap_or(q1),
            whisker_high: inside.last().copied().unwrap_or(q3),
            outliers_below: s.iter().filter(|&&v| v < lo_fence).count(),
            outliers_above: s.iter().filter(|&&v| v > hi_fence).count(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageSample {
    pub t: usize,
    pub node: String,
    pub phase: Phase,
    pub v_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VufSample {
    pub t: usize,
    pub node: String,
    pub vuf_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestepSeries {
    pub t: Vec<usize>,
    pub pv_energy_kwh: Vec<f64>,
    pub losses_kwh: Vec<f64>,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub vuf_max_pct: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub description: String,
    pub status: String,
    pub objective_kwh: f64,
    pub wall_time_s: f64,
    pub iterations: usize,
    pub losses_kwh: f64,
    /// Voltage magnitudes of all non-slack nodes and phases, p.u.
    pub voltage: BoxStats,
    /// Unbalance factors of all non-slack nodes, percent.
    pub vuf: BoxStats,
    pub series: TimestepSeries,
    pub assignment: String,
    /// Largest OPF vs power-flow voltage difference, p.u., when validated.
    pub oracle_max_deviation_pu: Option<f64>,
    pub voltages: Vec<VoltageSample>,
    pub vufs: Vec<VufSample>,
}

/// Everything written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub case: String,
    pub pv_cap_kw: f64,
    pub seed: u64,
    pub reports: Vec<MetricsReport>,
}

/// Metrics for one solved strategy. Losses are cross-checked for optimal
/// results only.
pub fn build_strategy_report(
    case: &NetworkCase,
    outcome: &StrategyOutcome,
) -> Result<MetricsReport, MetricsError> {
    let op = OperatingPoint::from_solution(case, &outcome.problem, &outcome.result.x);
    let losses_t = losses_per_t_kwh(case, &op);
    // The balance identity only holds at a converged point.
    let losses_kwh = if outcome.result.status == SolveStatus::Optimal {
        total_losses_kwh(case, &op)?
    } else {
        losses_t.iter().sum()
    };
    let mut voltages = Vec::new();
    let mut vufs = Vec::new();
    let mut series = TimestepSeries {
        t: op.timesteps.clone(),
        pv_energy_kwh: Vec::new(),
        losses_kwh: losses_t,
        v_min: Vec::new(),
        v_max: Vec::new(),
        vuf_max_pct: Vec::new(),
    };
    let x = &outcome.result.x;
    let problem = &outcome.problem;
    for (k, &t) in op.timesteps.iter().enumerate() {
        let (mut lo, mut hi, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        for node in 1..case.nodes.len() {
            for ph in Phase::ALL {
                let v = op.voltages[k][node][ph.index()].norm();
                lo = lo.min(v);
                hi = hi.max(v);
                voltages.push(VoltageSample {
                    t,
                    node: case.nodes[node].id.clone(),
                    phase: ph,
                    v_pu: v,
                });
            }
            let f = vuf_percent(&op, node, k)?;
            vmax = vmax.max(f);
            vufs.push(VufSample {
                t,
                node: case.nodes[node].id.clone(),
                vuf_pct: f,
            });
        }
        let energy: f64 = (0..case.pv_candidates.len())
            .flat_map(|pv| Phase::ALL.map(|ph| problem.vars.get(VarKind::PvActive, pv, ph, t)))
            .flatten()
            .map(|i| x[i])
            .sum::<f64>()
            * case.step_hours
            * case.base.power_kva;
        series.pv_energy_kwh.push(energy);
        series.v_min.push(lo);
        series.v_max.push(hi);
        series.vuf_max_pct.push(vmax);
    }
    let v_samples: Vec<f64> = voltages.iter().map(|s| s.v_pu).collect();
    let f_samples: Vec<f64> = vufs.iter().map(|s| s.vuf_pct).collect();
    Ok(MetricsReport {
        strategy: outcome.strategy.as_str().to_string(),
        description: outcome.strategy.description().to_string(),
        status: outcome.result.status.as_str().to_string(),
        objective_kwh: outcome.result.objective_kwh,
        wall_time_s: outcome.result.wall_time_s,
        iterations: outcome.result.iterations,
        losses_kwh,
        voltage: BoxStats::from_samples(&v_samples).ok_or(MetricsError::Empty)?,
        vuf: BoxStats::from_samples(&f_samples).ok_or(MetricsError::Empty)?,
        series,
        assignment: outcome.assignment.to_string(),
        oracle_max_deviation_pu: None,
        voltages,
        vufs,
    })
}

/// Metrics for every outcome, in input order.
pub fn build_report(
    case: &NetworkCase,
    outcomes: &[StrategyOutcome],
) -> Result<Vec<MetricsReport>, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    outcomes
        .iter()
        .map(|o| build_strategy_report(case, o))
        .collect()
}

/// Largest voltage difference (p.u.) between an OPF solution and the power
/// flow driven by the same injections.
pub fn oracle_voltage_deviation(op: &OperatingPoint, pf: &PfSolution) -> f64 {
    let mut dev: f64 = 0.0;
    for (k, &t) in op.timesteps.iter().enumerate() {
        for (a, b) in op.voltages[k].iter().zip(&pf.voltages[t]) {
            for ph in 0..3 {
                dev = dev.max((a[ph] - b[ph]).norm());
            }
        }
    }
    dev
}

/// Convenience: injections of an OPF solution for the oracle.
pub fn schedule_of(case: &NetworkCase, outcome: &StrategyOutcome) -> InjectionSchedule {
    InjectionSchedule::from_solution(case, &outcome.problem, &outcome.result.x)
}

/// Six significant digits, `%g` style.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OutputOptions {
    /// Write measured wall time into `summary.csv` instead of `-`, which
    /// makes the file differ between otherwise identical runs.
    pub include_timing: bool,
}

pub const SUMMARY_HEADER: [&str; 7] = [
    "strategy",
    "objective_kwh",
    "wall_time_s",
    "losses_kwh",
    "v_min",
    "v_max",
    "vuf_max",
];

/// Summary rows in `summary.csv` column order.
pub fn summary_rows(reports: &[MetricsReport], options: OutputOptions) -> Vec<[String; 7]> {
    reports
        .iter()
        .map(|r| {
            [
                r.strategy.clone(),
                format_sig6(r.objective_kwh),
                if options.include_timing {
                    format_sig6(r.wall_time_s)
                } else {
                    "-".into()
                },
                format_sig6(r.losses_kwh),
                format_sig6(r.voltage.min),
                format_sig6(r.voltage.max),
                format_sig6(r.vuf.max),
            ]
        })
        .collect()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| MetricsError::Serialize(e.to_string());
    w.write_record(header).map_err(ser)?;
    for row in rows {
        w.write_record(&row).map_err(ser)?;
    }
    w.into_inner()
        .map_err(|e| MetricsError::Serialize(e.to_string()))
}

/// Write `summary.csv`, `voltage_hist.csv`, `vuf_hist.csv`,
/// `losses_per_t.csv` and `report.json` into `out_dir`. Nothing is written
/// when there are no reports.
pub fn write_outputs(
    file: &ReportFile,
    out_dir: &Path,
    options: OutputOptions,
) -> Result<(), MetricsError> {
    let reports = &file.reports;
    if reports.is_empty() {
        return Err(MetricsError::Empty);
    }
    let summary = csv_bytes(
        &SUMMARY_HEADER,
        summary_rows(reports, options).into_iter().map(|r| r.to_vec()),
    )?;
    let voltage = csv_bytes(
        &["strategy", "t", "node", "phase", "v_pu"],
        reports.iter().flat_map(|r| {
            r.voltages.iter().map(|s| {
                vec![
                    r.strategy.clone(),
                    s.t.to_string(),
                    s.node.clone(),
                    s.phase.as_str().to_string(),
                    format_sig6(s.v_pu),
                ]
            })
        }),
    )?;
    let vuf = csv_bytes(
        &["strategy", "t", "node", "vuf_pct"],
        reports.iter().flat_map(|r| {
            r.vufs.iter().map(|s| {
                vec![
                    r.strategy.clone(),
                    s.t.to_string(),
                    s.node.clone(),
                    format_sig6(s.vuf_pct),
                ]
            })
        }),
    )?;
    let losses = csv_bytes(
        &["strategy", "t", "losses_kwh", "pv_energy_kwh"],
        reports.iter().flat_map(|r| {
            (0..r.series.t.len()).map(|k| {
                vec![
                    r.strategy.clone(),
                    r.series.t[k].to_string(),
                    format_sig6(r.series.losses_kwh[k]),
                    format_sig6(r.series.pv_energy_kwh[k]),
                ]
            })
        }),
    )?;
    let json = serde_json::to_vec_pretty(file).map_err(|e| MetricsError::Serialize(e.to_string()))?;

    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MetricsError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    for (name, bytes) in [
        ("summary.csv", &summary),
        ("voltage_hist.csv", &voltage),
        ("vuf_hist.csv", &vuf),
        ("losses_per_t.csv", &losses),
        ("report.json", &json),
    ] {
        let path = out_dir.join(name);
        let mut f = fs::File::create(&path).map_err(io(&path))?;
        f.write_all(bytes).map_err(io(&path))?;
    }
    Ok(())
}

/// Parse a `report.json` written by [`write_outputs`].
pub fn read_report(path: &Path) -> Result<ReportFile, MetricsError> {
    let bytes = fs::read(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| MetricsError::Serialize(e.to_string()))
}
