//! The three-phase current-voltage OPF as a sparse nonlinear program.
//!
//! Every constraint of the model is at most quadratic in the rectangular
//! voltage/current variables, so each row is stored as a [`QuadRow`] and the
//! Jacobian and Hessian follow in closed form. Rows and variables are laid
//! out timestep by timestep; the block of a single timestep is identical to
//! the corresponding slice of a multi-timestep problem.
//!
//! Variable layout per timestep:
//!
//! ```text
//! [ U_re U_im ]       per non-slack node, phase
//! [ I_re I_im P Q ]   per branch, phase
//! [ Iload_re Iload_im ]         per load node, phase
//! [ Ipv_re Ipv_im Ppv Qpv (x) ] per PV candidate, phase
//! ```

pub mod expr;

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

pub use expr::{Affine, QuadRow, RowInfo, RowKind, SparseMatrix};

use crate::error::FormulationError;
use crate::network::{NetworkCase, Phase};
use crate::strategy::PhaseAssignment;
use crate::unbalance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKind {
    VoltageRe,
    VoltageIm,
    BranchCurrentRe,
    BranchCurrentIm,
    BranchActiveFlow,
    BranchReactiveFlow,
    LoadCurrentRe,
    LoadCurrentIm,
    PvCurrentRe,
    PvCurrentIm,
    PvActive,
    PvReactive,
    PhaseIndicator,
}

/// Symbolic identity of a variable. `entity` is a node index for voltages
/// and load currents, a branch index for branch quantities and a PV
/// candidate index for PV quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarKey {
    pub kind: VarKind,
    pub entity: usize,
    pub phase: Phase,
    pub t: usize,
}

#[derive(Debug, Clone, Default)]
pub struct VariableSpace {
    keys: Vec<VarKey>,
    lookup: HashMap<VarKey, usize>,
}

impl VariableSpace {
    fn push(&mut self, key: VarKey) -> usize {
        let idx = self.keys.len();
        let prev = self.lookup.insert(key, idx);
        debug_assert!(prev.is_none(), "duplicate variable {key:?}");
        self.keys.push(key);
        idx
    }

    pub fn dimension(&self) -> usize {
        self.keys.len()
    }

    pub fn key(&self, index: usize) -> VarKey {
        self.keys[index]
    }

    pub fn keys(&self) -> &[VarKey] {
        &self.keys
    }

    pub fn index_of(&self, key: &VarKey) -> Option<usize> {
        self.lookup.get(key).copied()
    }

    pub fn get(&self, kind: VarKind, entity: usize, phase: Phase, t: usize) -> Option<usize> {
        self.index_of(&VarKey {
            kind,
            entity,
            phase,
            t,
        })
    }
}

/// Why a variable box is tighter than its natural range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum BoundKind {
    /// PV output on a phase it is not connected to, or at a zero-curve step.
    PvDisconnected,
    PvNonNegative,
    PvReactiveRange,
    IndicatorBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub var: usize,
    pub kind: BoundKind,
}

/// Partial fixing of the relaxed phase indicators; `true` fixes an
/// indicator to one, `false` to zero. Keyed by `(pv, t, phase)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelaxationFixings {
    pub fixed: BTreeMap<(usize, usize, Phase), bool>,
}

impl RelaxationFixings {
    pub fn free() -> Self {
        Self::default()
    }

    /// Connection status of each phase of `(pv, t)`; a phase fixed to one
    /// forces the other two to zero.
    pub fn statuses(&self, pv: usize, t: usize) -> [IndicatorStatus; 3] {
        let one = Phase::ALL
            .into_iter()
            .find(|&p| self.fixed.get(&(pv, t, p)) == Some(&true));
        Phase::ALL.map(|p| match (one, self.fixed.get(&(pv, t, p))) {
            (Some(q), _) if q == p => IndicatorStatus::One,
            (Some(_), _) => IndicatorStatus::Zero,
            (None, Some(false)) => IndicatorStatus::Zero,
            _ => IndicatorStatus::Free,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndicatorStatus {
    Zero,
    One,
    Free,
}

/// How PV candidates connect to phases in a built problem.
#[derive(Debug, Clone, Copy)]
pub enum PvConnection<'a> {
    Assigned(&'a PhaseAssignment),
    /// Continuous indicators in `[0, 1]` with at most one unit of
    /// connection per `(pv, t)`.
    Relaxed(&'a RelaxationFixings),
}

/// Flattened OPF: variables, quadratic rows, variable boxes, the linear
/// energy objective (per-unit hours) and precomputed derivative patterns.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    pub vars: VariableSpace,
    pub rows: Vec<QuadRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bound_rows: Vec<BoundRow>,
    /// Energy objective coefficients (maximized).
    pub objective: Vec<(usize, f64)>,
    pub x0: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub var_blocks: Vec<Range<usize>>,
    pub row_blocks: Vec<Range<usize>>,
    pub base_power_kva: f64,
    jac_rows: Vec<usize>,
    jac_cols: Vec<usize>,
    hess_rows: Vec<usize>,
    hess_cols: Vec<usize>,
    slots: Vec<RowSlots>,
}

#[derive(Debug, Clone)]
struct RowSlots {
    lin: Vec<usize>,
    /// (jacobian slot of i, jacobian slot of j, hessian slot)
    quad: Vec<(usize, usize, usize)>,
}

struct Builder<'c> {
    case: &'c NetworkCase,
    vars: VariableSpace,
    rows: Vec<QuadRow>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x0: Vec<f64>,
    bound_rows: Vec<BoundRow>,
    objective: Vec<(usize, f64)>,
}

impl Builder<'_> {
    fn var(&mut self, kind: VarKind, entity: usize, phase: Phase, t: usize, init: f64) -> usize {
        let i = self.vars.push(VarKey {
            kind,
            entity,
            phase,
            t,
        });
        self.lower.push(f64::NEG_INFINITY);
        self.upper.push(f64::INFINITY);
        self.x0.push(init);
        i
    }

    fn bound(&mut self, var: usize, lo: f64, hi: f64, kind: BoundKind) {
        self.lower[var] = lo;
        self.upper[var] = hi;
        self.bound_rows.push(BoundRow { var, kind });
    }

    fn voltage(&self, node: usize, phase: Phase, t: usize) -> (Affine, Affine) {
        if node == self.case.slack_node() {
            let (re, im) = self.case.slack.voltage(phase);
            (Affine::constant(re), Affine::constant(im))
        } else {
            let g = |k| Affine::var(self.vars.get(k, node, phase, t).expect("voltage var"));
            (g(VarKind::VoltageRe), g(VarKind::VoltageIm))
        }
    }

    fn affine(&self, kind: VarKind, entity: usize, phase: Phase, t: usize) -> Affine {
        Affine::var(self.vars.get(kind, entity, phase, t).expect("variable exists"))
    }

    fn row(&mut self, row: QuadRow) {
        self.rows.push(row.finish());
    }
}

/// Build the OPF for the given timesteps. `pv_cap` is the scenario cap in
/// per-unit; candidates with a `p_max` override use their own value.
pub fn build_problem(
    case: &NetworkCase,
    connection: PvConnection<'_>,
    pv_cap: f64,
    timesteps: &[usize],
) -> Result<NlpProblem, FormulationError> {
    if timesteps.is_empty() {
        return Err(FormulationError::EmptyTimesteps);
    }
    if !(pv_cap > 0.0) {
        return Err(FormulationError::NonPositiveCap(pv_cap));
    }
    let mut steps = timesteps.to_vec();
    steps.sort_unstable();
    steps.dedup();
    for &t in &steps {
        if t >= case.horizon_steps {
            return Err(FormulationError::TimestepOutOfRange {
                t,
                horizon: case.horizon_steps,
            });
        }
    }
    let n_pv = case.pv_candidates.len();
    match connection {
        PvConnection::Assigned(a) => {
            if a.pv_count() != n_pv {
                return Err(FormulationError::UnknownPv(a.pv_count().max(n_pv) - 1));
            }
            for pv in 0..n_pv {
                for &t in &steps {
                    if a.phase_at(pv, t).is_none() {
                        return Err(FormulationError::IncompleteAssignment { pv, t });
                    }
                }
            }
        }
        PvConnection::Relaxed(f) => {
            if let Some(&(pv, _, _)) = f.fixed.keys().find(|k| k.0 >= n_pv) {
                return Err(FormulationError::UnknownPv(pv));
            }
        }
    }

    let mut b = Builder {
        case,
        vars: VariableSpace::default(),
        rows: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        x0: Vec::new(),
        bound_rows: Vec::new(),
        objective: Vec::new(),
    };
    let mut var_blocks = Vec::new();
    let mut row_blocks = Vec::new();
    for &t in &steps {
        let (v0, r0) = (b.vars.dimension(), b.rows.len());
        build_timestep(&mut b, connection, pv_cap, t);
        var_blocks.push(v0..b.vars.dimension());
        row_blocks.push(r0..b.rows.len());
    }

    let (jac_rows, jac_cols, hess_rows, hess_cols, slots) = derivative_patterns(&b.rows);
    Ok(NlpProblem {
        vars: b.vars,
        rows: b.rows,
        lower: b.lower,
        upper: b.upper,
        bound_rows: b.bound_rows,
        objective: b.objective,
        x0: b.x0,
        timesteps: steps,
        var_blocks,
        row_blocks,
        base_power_kva: case.base.power_kva,
        jac_rows,
        jac_cols,
        hess_rows,
        hess_cols,
        slots,
    })
}

fn build_timestep(b: &mut Builder<'_>, connection: PvConnection<'_>, pv_cap: f64, t: usize) {
    let case = b.case;
    let n_nodes = case.nodes.len();

    // Variables.
    for node in 1..n_nodes {
        for ph in Phase::ALL {
            let (re, im) = case.slack.voltage(ph);
            b.var(VarKind::VoltageRe, node, ph, t, re);
            b.var(VarKind::VoltageIm, node, ph, t, im);
        }
    }
    for br in 0..case.branches.len() {
        for ph in Phase::ALL {
            b.var(VarKind::BranchCurrentRe, br, ph, t, 0.0);
            b.var(VarKind::BranchCurrentIm, br, ph, t, 0.0);
            b.var(VarKind::BranchActiveFlow, br, ph, t, 0.0);
            b.var(VarKind::BranchReactiveFlow, br, ph, t, 0.0);
        }
    }
    for load in &case.loads {
        for ph in Phase::ALL {
            b.var(VarKind::LoadCurrentRe, load.node, ph, t, 0.0);
            b.var(VarKind::LoadCurrentIm, load.node, ph, t, 0.0);
        }
    }
    // Per (pv, phase): whether the phase may generate and, in relaxed mode,
    // the indicator variable scaling the cap.
    let mut pv_links: Vec<[(bool, Option<usize>); 3]> = Vec::with_capacity(case.pv_candidates.len());
    for (pv_idx, pv) in case.pv_candidates.iter().enumerate() {
        let cap_t = pv.effective_cap(pv_cap) * pv.curve[t];
        let mut links = [(false, None); 3];
        let statuses = match connection {
            PvConnection::Assigned(a) => {
                let q = a.phase_at(pv_idx, t).expect("validated coverage");
                Phase::ALL.map(|p| {
                    if p == q {
                        IndicatorStatus::One
                    } else {
                        IndicatorStatus::Zero
                    }
                })
            }
            PvConnection::Relaxed(f) => f.statuses(pv_idx, t),
        };
        for ph in Phase::ALL {
            b.var(VarKind::PvCurrentRe, pv_idx, ph, t, 0.0);
            b.var(VarKind::PvCurrentIm, pv_idx, ph, t, 0.0);
            let p = b.var(VarKind::PvActive, pv_idx, ph, t, 0.0);
            let q = b.var(VarKind::PvReactive, pv_idx, ph, t, 0.0);
            b.objective.push((p, case.step_hours));
            let status = statuses[ph.index()];
            let connected = cap_t > 0.0 && status != IndicatorStatus::Zero;
            if connected {
                b.bound(p, 0.0, f64::INFINITY, BoundKind::PvNonNegative);
                match pv.q_max {
                    Some(qm) if qm > 0.0 => b.bound(q, -qm, qm, BoundKind::PvReactiveRange),
                    _ => b.bound(q, 0.0, 0.0, BoundKind::PvReactiveRange),
                }
                let x = if status == IndicatorStatus::Free {
                    let x = b.var(VarKind::PhaseIndicator, pv_idx, ph, t, 1.0 / 3.0);
                    b.bound(x, 0.0, 1.0, BoundKind::IndicatorBox);
                    Some(x)
                } else {
                    None
                };
                links[ph.index()] = (true, x);
            } else {
                b.bound(p, 0.0, 0.0, BoundKind::PvDisconnected);
                b.bound(q, 0.0, 0.0, BoundKind::PvDisconnected);
            }
        }
        pv_links.push(links);
    }

    // Voltage drop along each branch.
    for (br_idx, br) in case.branches.iter().enumerate() {
        for ph in Phase::ALL {
            let (ui_re, ui_im) = b.voltage(br.from_node, ph, t);
            let (uj_re, uj_im) = b.voltage(br.to_node, ph, t);
            let info = |kind| RowInfo {
                kind,
                entity: br_idx,
                phase: Some(ph),
                t,
            };
            let mut re = QuadRow::new(info(RowKind::VoltageDropRe));
            re.add_affine(&uj_re, 1.0).add_affine(&ui_re, -1.0);
            let mut im = QuadRow::new(info(RowKind::VoltageDropIm));
            im.add_affine(&uj_im, 1.0).add_affine(&ui_im, -1.0);
            for q in Phase::ALL {
                let r = br.resistance[ph.index()][q.index()];
                let x = br.reactance[ph.index()][q.index()];
                let i_re = b.affine(VarKind::BranchCurrentRe, br_idx, q, t);
                let i_im = b.affine(VarKind::BranchCurrentIm, br_idx, q, t);
                re.add_affine(&i_re, r).add_affine(&i_im, -x);
                im.add_affine(&i_im, r).add_affine(&i_re, x);
            }
            b.row(re);
            b.row(im);
        }
    }

    // Branch power flows at the sending end.
    for (br_idx, br) in case.branches.iter().enumerate() {
        for ph in Phase::ALL {
            let (ui_re, ui_im) = b.voltage(br.from_node, ph, t);
            let i_re = b.affine(VarKind::BranchCurrentRe, br_idx, ph, t);
            let i_im = b.affine(VarKind::BranchCurrentIm, br_idx, ph, t);
            let info = |kind| RowInfo {
                kind,
                entity: br_idx,
                phase: Some(ph),
                t,
            };
            let mut p = QuadRow::new(info(RowKind::BranchActiveFlow));
            p.add_affine(&b.affine(VarKind::BranchActiveFlow, br_idx, ph, t), 1.0)
                .add_product(&ui_re, &i_re, -1.0)
                .add_product(&ui_im, &i_im, -1.0);
            let mut q = QuadRow::new(info(RowKind::BranchReactiveFlow));
            q.add_affine(&b.affine(VarKind::BranchReactiveFlow, br_idx, ph, t), 1.0)
                .add_product(&ui_im, &i_re, -1.0)
                .add_product(&ui_re, &i_im, 1.0);
            b.row(p);
            b.row(q);
        }
    }

    // Load and PV injection currents.
    for load in &case.loads {
        for ph in Phase::ALL {
            let (u_re, u_im) = b.voltage(load.node, ph, t);
            let i_re = b.affine(VarKind::LoadCurrentRe, load.node, ph, t);
            let i_im = b.affine(VarKind::LoadCurrentIm, load.node, ph, t);
            let info = |kind| RowInfo {
                kind,
                entity: load.node,
                phase: Some(ph),
                t,
            };
            let mut p = QuadRow::new(info(RowKind::LoadActive));
            p.add_product(&u_re, &i_re, 1.0)
                .add_product(&u_im, &i_im, 1.0)
                .add_constant(-load.p[ph.index()][t]);
            let mut q = QuadRow::new(info(RowKind::LoadReactive));
            q.add_product(&u_im, &i_re, 1.0)
                .add_product(&u_re, &i_im, -1.0)
                .add_constant(-load.q[ph.index()][t]);
            b.row(p);
            b.row(q);
        }
    }
    for (pv_idx, pv) in case.pv_candidates.iter().enumerate() {
        for ph in Phase::ALL {
            let (u_re, u_im) = b.voltage(pv.node, ph, t);
            let i_re = b.affine(VarKind::PvCurrentRe, pv_idx, ph, t);
            let i_im = b.affine(VarKind::PvCurrentIm, pv_idx, ph, t);
            let info = |kind| RowInfo {
                kind,
                entity: pv_idx,
                phase: Some(ph),
                t,
            };
            let mut p = QuadRow::new(info(RowKind::PvActive));
            p.add_product(&u_re, &i_re, 1.0)
                .add_product(&u_im, &i_im, 1.0)
                .add_affine(&b.affine(VarKind::PvActive, pv_idx, ph, t), -1.0);
            let mut q = QuadRow::new(info(RowKind::PvReactive));
            q.add_product(&u_im, &i_re, 1.0)
                .add_product(&u_re, &i_im, -1.0)
                .add_affine(&b.affine(VarKind::PvReactive, pv_idx, ph, t), -1.0);
            b.row(p);
            b.row(q);
        }
    }

    // Current balance at every non-slack node; child branches are summed.
    let pv_at: HashMap<usize, usize> = case
        .pv_candidates
        .iter()
        .enumerate()
        .map(|(i, pv)| (pv.node, i))
        .collect();
    for node in 1..n_nodes {
        for ph in Phase::ALL {
            for (kind, load_kind, pv_kind, br_kind) in [
                (RowKind::KclRe, VarKind::LoadCurrentRe, VarKind::PvCurrentRe, VarKind::BranchCurrentRe),
                (RowKind::KclIm, VarKind::LoadCurrentIm, VarKind::PvCurrentIm, VarKind::BranchCurrentIm),
            ] {
                let mut row = QuadRow::new(RowInfo {
                    kind,
                    entity: node,
                    phase: Some(ph),
                    t,
                });
                if case.load_at(node).is_some() {
                    row.add_affine(&b.affine(load_kind, node, ph, t), 1.0);
                }
                if let Some(&pv) = pv_at.get(&node) {
                    row.add_affine(&b.affine(pv_kind, pv, ph, t), -1.0);
                }
                let parent = case.parent_branch(node).expect("non-slack node has a parent");
                row.add_affine(&b.affine(br_kind, parent, ph, t), -1.0);
                for &child in case.child_branches(node) {
                    row.add_affine(&b.affine(br_kind, child, ph, t), 1.0);
                }
                b.row(row);
            }
        }
    }

    // Thermal limits.
    for (br_idx, br) in case.branches.iter().enumerate() {
        for ph in Phase::ALL {
            let i_re = b.affine(VarKind::BranchCurrentRe, br_idx, ph, t);
            let i_im = b.affine(VarKind::BranchCurrentIm, br_idx, ph, t);
            let mut row = QuadRow::new(RowInfo {
                kind: RowKind::Thermal,
                entity: br_idx,
                phase: Some(ph),
                t,
            });
            row.add_product(&i_re, &i_re, 1.0)
                .add_product(&i_im, &i_im, 1.0)
                .add_constant(-br.i_max * br.i_max);
            b.row(row);
        }
    }

    // Voltage band.
    let lim = case.limits;
    for node in 1..n_nodes {
        for ph in Phase::ALL {
            let (u_re, u_im) = b.voltage(node, ph, t);
            let info = |kind| RowInfo {
                kind,
                entity: node,
                phase: Some(ph),
                t,
            };
            let mut lo = QuadRow::new(info(RowKind::VoltageLower));
            lo.add_constant(lim.u_min * lim.u_min)
                .add_product(&u_re, &u_re, -1.0)
                .add_product(&u_im, &u_im, -1.0);
            let mut hi = QuadRow::new(info(RowKind::VoltageUpper));
            hi.add_product(&u_re, &u_re, 1.0)
                .add_product(&u_im, &u_im, 1.0)
                .add_constant(-lim.u_max * lim.u_max);
            b.row(lo);
            b.row(hi);
        }
    }

    // Unbalance, multiplied through by the positive-sequence magnitude.
    let vuf2 = lim.vuf_max * lim.vuf_max;
    for node in 1..n_nodes {
        let comps: Vec<Affine> = Phase::ALL
            .into_iter()
            .flat_map(|ph| {
                let (re, im) = b.voltage(node, ph, t);
                [re, im]
            })
            .collect();
        let form = |coef: &[f64; 6]| {
            let parts: Vec<(&Affine, f64)> = comps.iter().zip(coef).map(|(a, &w)| (a, w)).collect();
            Affine::combine(&parts)
        };
        let (n_re, n_im) = (form(&unbalance::NEGATIVE_RE), form(&unbalance::NEGATIVE_IM));
        let (p_re, p_im) = (form(&unbalance::POSITIVE_RE), form(&unbalance::POSITIVE_IM));
        let mut row = QuadRow::new(RowInfo {
            kind: RowKind::Unbalance,
            entity: node,
            phase: None,
            t,
        });
        row.add_product(&n_re, &n_re, 1.0)
            .add_product(&n_im, &n_im, 1.0)
            .add_product(&p_re, &p_re, -vuf2)
            .add_product(&p_im, &p_im, -vuf2);
        b.row(row);
    }

    // PV caps and indicator rows.
    for (pv_idx, pv) in case.pv_candidates.iter().enumerate() {
        let cap_t = pv.effective_cap(pv_cap) * pv.curve[t];
        let mut free_indicators = Vec::new();
        for ph in Phase::ALL {
            let (connected, indicator) = pv_links[pv_idx][ph.index()];
            if !connected {
                continue;
            }
            let mut row = QuadRow::new(RowInfo {
                kind: RowKind::PvCap,
                entity: pv_idx,
                phase: Some(ph),
                t,
            });
            row.add_affine(&b.affine(VarKind::PvActive, pv_idx, ph, t), 1.0);
            match indicator {
                Some(x) => {
                    row.add_affine(&Affine::var(x), -cap_t);
                    free_indicators.push(x);
                }
                None => {
                    row.add_constant(-cap_t);
                }
            }
            b.row(row);
        }
        if free_indicators.len() >= 2 {
            let mut row = QuadRow::new(RowInfo {
                kind: RowKind::PhaseSelection,
                entity: pv_idx,
                phase: None,
                t,
            });
            for x in free_indicators {
                row.add_affine(&Affine::var(x), 1.0);
            }
            row.add_constant(-1.0);
            b.row(row);
        }
    }
}

type Patterns = (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>, Vec<RowSlots>);

fn derivative_patterns(rows: &[QuadRow]) -> Patterns {
    let mut jac_rows = Vec::new();
    let mut jac_cols = Vec::new();
    let mut hess_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for row in rows {
        for &(i, j, _) in &row.quadratic {
            hess_index.entry((i, j)).or_insert(0);
        }
    }
    for (slot, v) in hess_index.values_mut().enumerate() {
        *v = slot;
    }
    let mut slots = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let mut cols: Vec<usize> = row
            .linear
            .iter()
            .map(|t| t.0)
            .chain(row.quadratic.iter().flat_map(|t| [t.0, t.1]))
            .collect();
        cols.sort_unstable();
        cols.dedup();
        let base = jac_cols.len();
        let pos = |c: usize| base + cols.binary_search(&c).expect("column in pattern");
        let lin = row.linear.iter().map(|t| pos(t.0)).collect();
        let quad = row
            .quadratic
            .iter()
            .map(|&(i, j, _)| (pos(i), pos(j), hess_index[&(i, j)]))
            .collect();
        for &c in &cols {
            jac_rows.push(r);
            jac_cols.push(c);
        }
        slots.push(RowSlots { lin, quad });
    }
    let (hess_rows, hess_cols) = hess_index.keys().map(|&(i, j)| (i, j)).unzip();
    (jac_rows, jac_cols, hess_rows, hess_cols, slots)
}

impl NlpProblem {
    pub fn dimension(&self) -> usize {
        self.vars.dimension()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), FormulationError> {
        if x.len() != self.dimension() {
            return Err(FormulationError::Dimension {
                expected: self.dimension(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Residuals: equality rows give `lhs - rhs`, inequality rows `g(x)`
    /// with the convention `g(x) <= 0`.
    pub fn eval_constraints(&self, x: &[f64]) -> Result<Vec<f64>, FormulationError> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.rows.len()];
        self.constraints_into(x, &mut out);
        Ok(out)
    }

    pub fn constraints_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.value(x);
        }
    }

    /// Energy in per-unit hours (the maximized quantity).
    pub fn eval_objective(&self, x: &[f64]) -> Result<f64, FormulationError> {
        self.check_dim(x)?;
        Ok(self.objective_value(x))
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(i, w)| w * x[i]).sum()
    }

    pub fn eval_objective_grad(&self, x: &[f64]) -> Result<Vec<f64>, FormulationError> {
        self.check_dim(x)?;
        let mut g = vec![0.0; self.dimension()];
        for &(i, w) in &self.objective {
            g[i] += w;
        }
        Ok(g)
    }

    pub fn jacobian_pattern(&self) -> (&[usize], &[usize]) {
        (&self.jac_rows, &self.jac_cols)
    }

    pub fn jacobian_values_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (row, slots) in self.rows.iter().zip(&self.slots) {
            for (&(_, c), &s) in row.linear.iter().zip(&slots.lin) {
                out[s] += c;
            }
            for (&(i, j, c), &(si, sj, _)) in row.quadratic.iter().zip(&slots.quad) {
                out[si] += c * x[j];
                out[sj] += c * x[i];
            }
        }
    }

    pub fn eval_jacobian(&self, x: &[f64]) -> Result<SparseMatrix, FormulationError> {
        self.check_dim(x)?;
        let mut values = vec![0.0; self.jac_rows.len()];
        self.jacobian_values_into(x, &mut values);
        Ok(SparseMatrix {
            nrows: self.rows.len(),
            ncols: self.dimension(),
            rows: self.jac_rows.clone(),
            cols: self.jac_cols.clone(),
            values,
        })
    }

    /// Upper-triangle Hessian pattern of the Lagrangian.
    pub fn hessian_pattern(&self) -> (&[usize], &[usize]) {
        (&self.hess_rows, &self.hess_cols)
    }

    /// Constraint part of the Lagrangian Hessian; the objective is linear
    /// and contributes nothing.
    pub fn hessian_values_into(&self, multipliers: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for ((row, slots), &lam) in self.rows.iter().zip(&self.slots).zip(multipliers) {
            if lam == 0.0 {
                continue;
            }
            for (&(i, j, c), &(_, _, h)) in row.quadratic.iter().zip(&slots.quad) {
                out[h] += if i == j { 2.0 * c * lam } else { c * lam };
            }
        }
    }

    /// `obj_weight * grad^2(energy) + sum(lambda_r * grad^2 c_r)`, upper triangle.
    pub fn eval_lagrangian_hessian(
        &self,
        x: &[f64],
        multipliers: &[f64],
        _obj_weight: f64,
    ) -> Result<SparseMatrix, FormulationError> {
        self.check_dim(x)?;
        if multipliers.len() != self.rows.len() {
            return Err(FormulationError::Dimension {
                expected: self.rows.len(),
                got: multipliers.len(),
            });
        }
        let mut values = vec![0.0; self.hess_rows.len()];
        self.hessian_values_into(multipliers, &mut values);
        Ok(SparseMatrix {
            nrows: self.dimension(),
            ncols: self.dimension(),
            rows: self.hess_rows.clone(),
            cols: self.hess_cols.clone(),
            values,
        })
    }

    /// Objective in kWh.
    pub fn objective_kwh(&self, x: &[f64]) -> Result<f64, FormulationError> {
        Ok(self.eval_objective(x)? * self.base_power_kva)
    }

    pub fn row_count(&self, kind: RowKind) -> usize {
        self.rows.iter().filter(|r| r.info.kind == kind).count()
    }

    pub fn is_fixed(&self, var: usize) -> bool {
        self.lower[var] == self.upper[var]
    }
}

/// Energy objective of `x` in kWh.
pub fn objective_kwh(problem: &NlpProblem, x: &[f64]) -> Result<f64, FormulationError> {
    problem.objective_kwh(x)
}

#[cfg(test)]
mod tests;
