//! Backward-forward sweep power flow and symmetrical components.
//!
//! Written against the network model only, in complex arithmetic, so it can
//! check OPF solutions without sharing any of their code.

use num_complex::Complex64;

use crate::error::OracleError;
use crate::formulation::{NlpProblem, VarKind};
use crate::network::{Branch, NetworkCase, Phase};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Net complex power drawn at each `(t, node, phase)` in per-unit: load
/// minus generation. The slack entries are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSchedule {
    pub power: Vec<Vec<[Complex64; 3]>>,
}

impl InjectionSchedule {
    pub fn zero(case: &NetworkCase) -> Self {
        InjectionSchedule {
            power: vec![vec![[Complex64::default(); 3]; case.nodes.len()]; case.horizon_steps],
        }
    }

    /// Loads only, no PV.
    pub fn loads(case: &NetworkCase) -> Self {
        let mut s = Self::zero(case);
        for load in &case.loads {
            for (t, row) in s.power.iter_mut().enumerate() {
                for ph in Phase::ALL {
                    row[load.node][ph.index()] +=
                        Complex64::new(load.p[ph.index()][t], load.q[ph.index()][t]);
                }
            }
        }
        s
    }

    /// Subtract generation `gen[t][pv][phase]` (complex, per-unit) at the
    /// PV candidate nodes.
    pub fn with_generation(mut self, case: &NetworkCase, gen: &[Vec<[Complex64; 3]>]) -> Self {
        for (t, per_pv) in gen.iter().enumerate() {
            for (pv, powers) in per_pv.iter().enumerate() {
                let node = case.pv_candidates[pv].node;
                for k in 0..3 {
                    self.power[t][node][k] -= powers[k];
                }
            }
        }
        self
    }

    /// Loads of the case plus the PV output found in an OPF solution over
    /// the full horizon.
    pub fn from_solution(case: &NetworkCase, problem: &NlpProblem, x: &[f64]) -> Self {
        Self::loads(case).with_generation(case, &pv_generation(case, problem, x))
    }
}

/// PV output `[t][pv][phase]` read from an OPF solution; steps missing
/// from the problem are zero.
pub fn pv_generation(case: &NetworkCase, problem: &NlpProblem, x: &[f64]) -> Vec<Vec<[Complex64; 3]>> {
    (0..case.horizon_steps)
        .map(|t| {
            (0..case.pv_candidates.len())
                .map(|pv| {
                    Phase::ALL.map(|ph| {
                        let get = |k| problem.vars.get(k, pv, ph, t).map_or(0.0, |i| x[i]);
                        Complex64::new(get(VarKind::PvActive), get(VarKind::PvReactive))
                    })
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfSolution {
    /// `[t][node][phase]`, slack included.
    pub voltages: Vec<Vec<[Complex64; 3]>>,
    /// `[t][branch][phase]`, sending end to receiving end.
    pub currents: Vec<Vec<[Complex64; 3]>>,
    pub converged: bool,
    /// Sweeps used at each timestep.
    pub iterations: Vec<usize>,
    /// Largest complex power mismatch over all nodes and steps.
    pub max_mismatch: f64,
}

fn series_drop(br: &Branch, current: &[Complex64; 3]) -> [Complex64; 3] {
    let mut out = [Complex64::default(); 3];
    for (p, o) in out.iter_mut().enumerate() {
        for (q, i) in current.iter().enumerate() {
            *o += Complex64::new(br.resistance[p][q], br.reactance[p][q]) * i;
        }
    }
    out
}

fn slack_voltages(case: &NetworkCase) -> [Complex64; 3] {
    Phase::ALL.map(|ph| {
        let (re, im) = case.slack.voltage(ph);
        Complex64::new(re, im)
    })
}

/// Constant-power backward-forward sweep, timestep by timestep, until the
/// largest voltage update is below `tol`.
pub fn sweep_solve(
    case: &NetworkCase,
    schedule: &InjectionSchedule,
    tol: f64,
    max_iter: usize,
) -> Result<PfSolution, OracleError> {
    let n_nodes = case.nodes.len();
    if schedule.power.len() != case.horizon_steps
        || schedule.power.iter().any(|row| row.len() != n_nodes)
    {
        return Err(OracleError::Shape);
    }
    let slack = slack_voltages(case);
    let mut voltages = Vec::with_capacity(case.horizon_steps);
    let mut currents = Vec::with_capacity(case.horizon_steps);
    let mut iterations = Vec::with_capacity(case.horizon_steps);
    let mut max_mismatch: f64 = 0.0;

    for (t, demand) in schedule.power.iter().enumerate() {
        let mut v = vec![slack; n_nodes];
        let mut j = vec![[Complex64::default(); 3]; case.branches.len()];
        let mut history = Vec::new();
        let mut converged_at = None;
        for it in 1..=max_iter {
            // Backward: branches are ordered by receiving node depth.
            for b in (0..case.branches.len()).rev() {
                let to = case.branches[b].to_node;
                let mut acc = [Complex64::default(); 3];
                for k in 0..3 {
                    acc[k] = (demand[to][k] / v[to][k]).conj();
                }
                for &c in case.child_branches(to) {
                    for k in 0..3 {
                        acc[k] += j[c][k];
                    }
                }
                j[b] = acc;
            }
            // Forward.
            let mut change: f64 = 0.0;
            for (b, br) in case.branches.iter().enumerate() {
                let drop = series_drop(br, &j[b]);
                for k in 0..3 {
                    let new = v[br.from_node][k] - drop[k];
                    change = change.max((new - v[br.to_node][k]).norm());
                    v[br.to_node][k] = new;
                }
            }
            history.push(change);
            if change < tol {
                converged_at = Some(it);
                break;
            }
        }
        let Some(it) = converged_at else {
            return Err(OracleError::NonConvergence {
                t,
                iterations: max_iter,
                last_change: history.last().copied().unwrap_or(f64::NAN),
                history,
            });
        };
        // Power mismatch with the currents consistent with the final voltages.
        for node in 1..n_nodes {
            let parent = case.parent_branch(node).expect("tree");
            for k in 0..3 {
                let mut i_net = j[parent][k];
                for &c in case.child_branches(node) {
                    i_net -= j[c][k];
                }
                let s = v[node][k] * i_net.conj();
                max_mismatch = max_mismatch.max((s - demand[node][k]).norm());
            }
        }
        voltages.push(v);
        currents.push(j);
        iterations.push(it);
    }
    Ok(PfSolution {
        voltages,
        currents,
        converged: true,
        iterations,
        max_mismatch,
    })
}

/// Zero, positive and negative sequence components of a phase triplet.
pub fn sequence_components(
    u_a: Complex64,
    u_b: Complex64,
    u_c: Complex64,
) -> (Complex64, Complex64, Complex64) {
    let a = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    let a2 = a * a;
    let zero = (u_a + u_b + u_c) / 3.0;
    let positive = (u_a + a * u_b + a2 * u_c) / 3.0;
    let negative = (u_a + a2 * u_b + a * u_c) / 3.0;
    (zero, positive, negative)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polar(m: f64, deg: f64) -> Complex64 {
        Complex64::from_polar(m, deg.to_radians())
    }

    #[test]
    fn balanced_set_is_pure_positive_sequence() {
        let (z, p, n) = sequence_components(polar(1.0, 0.0), polar(1.0, -120.0), polar(1.0, 120.0));
        assert!(z.norm() < 1e-15);
        assert!(n.norm() < 1e-15);
        assert!((p.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn swapping_b_and_c_swaps_sequences() {
        let (ua, ub, uc) = (polar(1.02, 3.0), polar(0.97, -118.0), polar(1.0, 121.0));
        let (_, p, n) = sequence_components(ua, ub, uc);
        let (_, p2, n2) = sequence_components(ua, uc, ub);
        assert!((p.norm() - n2.norm()).abs() < 1e-14);
        assert!((n.norm() - p2.norm()).abs() < 1e-14);
    }
}
