//! Feeder data model: nodes, 3x3 impedance branches, per-phase load series,
//! PV candidates and operating limits, loaded from JSON case files and
//! normalized to per-unit.
//!
//! Per-unit conventions: `base_voltage_v` is the phase-to-neutral voltage
//! base and `base_power_kva` the single-phase power base, so that
//! `Z_base = V_base^2 / S_base` and `I_base = S_base / V_base` apply to the
//! per-phase equations directly.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CaseError;

pub type Matrix3 = [[f64; 3]; 3];

/// One of the three conductor phases. Ordered `A < B < C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Phase::A),
            "b" => Ok(Phase::B),
            "c" => Ok(Phase::C),
            other => Err(format!("unknown phase '{other}' (expected a, b or c)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub has_pv_candidate: bool,
}

/// A three-phase series element. Node references are indices into
/// [`NetworkCase::nodes`]; impedances and ampacity are per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: String,
    pub from_node: usize,
    pub to_node: usize,
    pub resistance: Matrix3,
    pub reactance: Matrix3,
    pub i_max: f64,
    pub is_transformer: bool,
}

/// Per-phase constant-PQ demand, per-unit, indexed `[phase][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries {
    pub node: usize,
    pub p: [Vec<f64>; 3],
    pub q: [Vec<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvCandidate {
    pub node: usize,
    /// Per-node override of the scenario PV cap, per-unit.
    pub p_max: Option<f64>,
    /// Symmetric reactive range; `None` means unity power factor.
    pub q_max: Option<f64>,
    pub curve: Vec<f64>,
}

impl PvCandidate {
    /// The cap that applies to this candidate under a scenario cap `pv_cap`.
    pub fn effective_cap(&self, pv_cap: f64) -> f64 {
        self.p_max.unwrap_or(pv_cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingLimits {
    pub u_min: f64,
    pub u_max: f64,
    /// Fraction, not percent.
    pub vuf_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Base {
    pub voltage_v: f64,
    pub power_kva: f64,
}

impl Base {
    pub fn impedance_ohm(&self) -> f64 {
        self.voltage_v * self.voltage_v / (self.power_kva * 1000.0)
    }

    pub fn current_a(&self) -> f64 {
        self.power_kva * 1000.0 / self.voltage_v
    }

    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / self.power_kva
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.power_kva
    }
}

/// Fixed source voltage at the slack node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackSource {
    pub magnitude_pu: f64,
    pub angles_deg: [f64; 3],
}

impl SlackSource {
    /// Rectangular `(re, im)` slack voltage of a phase.
    pub fn voltage(&self, phase: Phase) -> (f64, f64) {
        let theta = self.angles_deg[phase.index()].to_radians();
        (self.magnitude_pu * theta.cos(), self.magnitude_pu * theta.sin())
    }
}

impl Default for SlackSource {
    fn default() -> Self {
        SlackSource {
            magnitude_pu: 1.0,
            angles_deg: [0.0, -120.0, 120.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SlackLevel {
    #[default]
    Lv,
    Mv,
}

/// A validated radial feeder. Node 0 is the slack; nodes are stored in
/// breadth-first order from the slack and every non-slack node has exactly
/// one parent branch.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    pub nodes: Vec<Node>,
    pub branches: Vec<Branch>,
    pub loads: Vec<LoadSeries>,
    pub pv_candidates: Vec<PvCandidate>,
    pub limits: OperatingLimits,
    pub horizon_steps: usize,
    pub step_hours: f64,
    pub base: Base,
    pub slack: SlackSource,
    pub slack_level: SlackLevel,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    node_lookup: HashMap<String, usize>,
    load_of_node: Vec<Option<usize>>,
}

impl NetworkCase {
    pub fn slack_node(&self) -> usize {
        0
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_lookup.get(id).copied()
    }

    /// The branch feeding `node`; `None` for the slack.
    pub fn parent_branch(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    /// Child branches of `node` (index form), in branch-id order.
    pub fn child_branches(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// Branches whose `from_node` is `node`, sorted by branch id.
    pub fn downstream_branches(&self, node: &str) -> Result<Vec<usize>, CaseError> {
        let idx = self
            .node_index(node)
            .ok_or_else(|| CaseError::Invalid(format!("unknown node id '{node}'")))?;
        Ok(self.children[idx].clone())
    }

    pub fn load_at(&self, node: usize) -> Option<&LoadSeries> {
        self.load_of_node[node].map(|i| &self.loads[i])
    }

    /// Active demand of `node` on `phase` at `t`, per-unit (zero if no load).
    pub fn p_load(&self, node: usize, phase: Phase, t: usize) -> f64 {
        self.load_at(node).map_or(0.0, |l| l.p[phase.index()][t])
    }

    pub fn q_load(&self, node: usize, phase: Phase, t: usize) -> f64 {
        self.load_at(node).map_or(0.0, |l| l.q[phase.index()][t])
    }

    /// The MV/LV transformer, modelled as the series-impedance root branch.
    pub fn transformer(&self) -> Option<&Branch> {
        self.branches.iter().find(|b| b.is_transformer)
    }

    /// Serialize back to the physical-unit file schema with inline loads.
    pub fn to_case_file(&self) -> CaseFile {
        let zb = self.base.impedance_ohm();
        let ib = self.base.current_a();
        let to_file_branch = |b: &Branch| BranchFile {
            id: b.id.clone(),
            from_node: self.nodes[b.from_node].id.clone(),
            to_node: self.nodes[b.to_node].id.clone(),
            r_ohm: flatten(&b.resistance).map(|v| v * zb).to_vec(),
            x_ohm: flatten(&b.reactance).map(|v| v * zb).to_vec(),
            i_max_a: b.i_max * ib,
        };
        let sb = self.base.power_kva;
        let phase_map = |series: &[Vec<f64>; 3]| {
            let mut m = BTreeMap::new();
            for ph in Phase::ALL {
                m.insert(ph, series[ph.index()].iter().map(|v| v * sb).collect());
            }
            m
        };
        CaseFile {
            meta: MetaFile {
                name: self.name.clone(),
                base_voltage_v: self.base.voltage_v,
                base_power_kva: self.base.power_kva,
                step_hours: self.step_hours,
                horizon_steps: self.horizon_steps,
                slack_voltage_pu: Some(self.slack.magnitude_pu),
                slack_angles_deg: Some(self.slack.angles_deg),
                slack_level: self.slack_level,
            },
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeFile {
                    id: n.id.clone(),
                    kind: n.kind,
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .filter(|b| !b.is_transformer)
                .map(to_file_branch)
                .collect(),
            transformer: self.transformer().map(to_file_branch),
            limits: LimitsFile {
                u_min_pu: self.limits.u_min,
                u_max_pu: self.limits.u_max,
                vuf_max_pct: self.limits.vuf_max * 100.0,
            },
            pv: self
                .pv_candidates
                .iter()
                .map(|pv| PvFile {
                    node: self.nodes[pv.node].id.clone(),
                    p_max_kw: pv.p_max.map(|p| p * sb),
                    q_max_kvar: pv.q_max.map(|q| q * sb),
                    curve: pv.curve.clone(),
                })
                .collect(),
            loads: LoadsFile::Inline(
                self.loads
                    .iter()
                    .map(|l| LoadFile {
                        node: self.nodes[l.node].id.clone(),
                        p_kw: phase_map(&l.p),
                        q_kvar: phase_map(&l.q),
                    })
                    .collect(),
            ),
        }
    }
}

fn flatten(m: &Matrix3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[r][c];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub meta: MetaFile,
    pub nodes: Vec<NodeFile>,
    pub branches: Vec<BranchFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transformer: Option<BranchFile>,
    pub limits: LimitsFile,
    #[serde(default)]
    pub pv: Vec<PvFile>,
    pub loads: LoadsFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaFile {
    pub name: String,
    pub base_voltage_v: f64,
    pub base_power_kva: f64,
    pub step_hours: f64,
    pub horizon_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack_voltage_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack_angles_deg: Option<[f64; 3]>,
    #[serde(default)]
    pub slack_level: SlackLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFile {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchFile {
    pub id: String,
    pub from_node: String,
    pub to_node: String,
    /// Row-major 3x3.
    pub r_ohm: Vec<f64>,
    pub x_ohm: Vec<f64>,
    pub i_max_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsFile {
    pub u_min_pu: f64,
    pub u_max_pu: f64,
    pub vuf_max_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvFile {
    pub node: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max_kw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max_kvar: Option<f64>,
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LoadsFile {
    Inline(Vec<LoadFile>),
    Csv { csv: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadFile {
    pub node: String,
    pub p_kw: BTreeMap<Phase, Vec<f64>>,
    #[serde(default)]
    pub q_kvar: BTreeMap<Phase, Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct LoadCsvRow {
    node: String,
    phase: Phase,
    t: usize,
    p_kw: f64,
    q_kvar: f64,
}

/// Read, parse and validate a case file. Relative CSV load references are
/// resolved against the case file's directory.
pub fn load_case(path: impl AsRef<Path>) -> Result<NetworkCase, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: CaseFile = serde_json::from_str(&text)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    NetworkCase::from_file(file, &dir)
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, CaseError> {
    Err(CaseError::Invalid(msg.into()))
}

fn read_matrix(values: &[f64], what: &str, branch: &str) -> Result<Matrix3, CaseError> {
    if values.len() != 9 {
        return invalid(format!(
            "branch '{branch}': {what} must have 9 entries, got {}",
            values.len()
        ));
    }
    let mut m = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = values[3 * r + c];
        }
    }
    Ok(m)
}

fn check_branch_matrix(m: &Matrix3, what: &str, branch: &str) -> Result<(), CaseError> {
    for r in 0..3 {
        if !(m[r][r] > 0.0) || !m[r][r].is_finite() {
            return invalid(format!(
                "branch '{branch}': {what} diagonal entries must be strictly positive"
            ));
        }
        for c in 0..3 {
            if !m[r][c].is_finite() {
                return invalid(format!("branch '{branch}': {what} has non-finite entry"));
            }
            let scale = m[r][c].abs().max(m[c][r].abs()).max(1e-300);
            if (m[r][c] - m[c][r]).abs() > 1e-12 * scale {
                return invalid(format!("branch '{branch}': {what} matrix is not symmetric"));
            }
        }
    }
    Ok(())
}

fn read_load_csv(path: &Path, horizon: usize) -> Result<Vec<LoadFile>, CaseError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut by_node: BTreeMap<String, (BTreeMap<Phase, Vec<Option<f64>>>, BTreeMap<Phase, Vec<Option<f64>>>)> =
        BTreeMap::new();
    let mut order = Vec::new();
    for row in reader.deserialize() {
        let row: LoadCsvRow = row?;
        if row.t >= horizon {
            return invalid(format!(
                "load csv: node '{}' t={} outside horizon {horizon}",
                row.node, row.t
            ));
        }
        let entry = by_node.entry(row.node.clone()).or_insert_with(|| {
            order.push(row.node.clone());
            let empty = || Phase::ALL.iter().map(|&p| (p, vec![None; horizon])).collect();
            (empty(), empty())
        });
        let p_slot = &mut entry.0.get_mut(&row.phase).expect("phase present")[row.t];
        let q_slot = &mut entry.1.get_mut(&row.phase).expect("phase present")[row.t];
        if p_slot.is_some() {
            return invalid(format!(
                "load csv: duplicate entry for node '{}' phase {} t={}",
                row.node, row.phase, row.t
            ));
        }
        *p_slot = Some(row.p_kw);
        *q_slot = Some(row.q_kvar);
    }
    let mut loads = Vec::new();
    for node in order {
        let (p, q) = by_node.remove(&node).expect("node recorded");
        let complete = |m: BTreeMap<Phase, Vec<Option<f64>>>| -> Result<BTreeMap<Phase, Vec<f64>>, CaseError> {
            m.into_iter()
                .map(|(ph, v)| {
                    v.into_iter()
                        .collect::<Option<Vec<f64>>>()
                        .map(|v| (ph, v))
                        .ok_or_else(|| {
                            CaseError::Invalid(format!(
                                "load csv: node '{node}' phase {ph} does not cover every timestep"
                            ))
                        })
                })
                .collect()
        };
        loads.push(LoadFile {
            node: node.clone(),
            p_kw: complete(p)?,
            q_kvar: complete(q)?,
        });
    }
    Ok(loads)
}

impl NetworkCase {
    /// Validate a parsed case file and convert it to per-unit.
    pub fn from_file(file: CaseFile, base_dir: &Path) -> Result<NetworkCase, CaseError> {
        let meta = &file.meta;
        if !(meta.base_voltage_v > 0.0 && meta.base_power_kva > 0.0) {
            return invalid("bases must be strictly positive");
        }
        if !(meta.step_hours > 0.0) || !meta.step_hours.is_finite() {
            return invalid("step_hours must be positive");
        }
        if meta.horizon_steps == 0 {
            return invalid("horizon_steps must be at least 1");
        }
        let base = Base {
            voltage_v: meta.base_voltage_v,
            power_kva: meta.base_power_kva,
        };
        let horizon = meta.horizon_steps;
        let zb = base.impedance_ohm();
        let ib = base.current_a();

        let lim = &file.limits;
        if !(lim.u_min_pu > 0.0 && lim.u_min_pu < lim.u_max_pu) {
            return invalid("limits must satisfy 0 < u_min < u_max");
        }
        if !(lim.vuf_max_pct > 0.0 && lim.vuf_max_pct < 100.0) {
            return invalid("vuf_max must lie strictly between 0 and 100 percent");
        }
        let limits = OperatingLimits {
            u_min: lim.u_min_pu,
            u_max: lim.u_max_pu,
            vuf_max: lim.vuf_max_pct / 100.0,
        };

        // Nodes in file order first; reindexed breadth-first below.
        let mut file_index = HashMap::new();
        for (i, n) in file.nodes.iter().enumerate() {
            if file_index.insert(n.id.clone(), i).is_some() {
                return invalid(format!("duplicate node id '{}'", n.id));
            }
        }
        let slacks: Vec<usize> = file
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Slack)
            .map(|(i, _)| i)
            .collect();
        if slacks.len() != 1 {
            return invalid(format!("expected exactly one slack node, found {}", slacks.len()));
        }
        let slack = slacks[0];

        let mut raw_branches = Vec::new();
        let mut seen_branch = HashMap::new();
        let mut push_branch = |b: &BranchFile, is_transformer: bool| -> Result<(), CaseError> {
            if seen_branch.insert(b.id.clone(), ()).is_some() {
                return invalid(format!("duplicate branch id '{}'", b.id));
            }
            let from = *file_index
                .get(&b.from_node)
                .ok_or_else(|| CaseError::Invalid(format!("dangling node id '{}' in branch '{}'", b.from_node, b.id)))?;
            let to = *file_index
                .get(&b.to_node)
                .ok_or_else(|| CaseError::Invalid(format!("dangling node id '{}' in branch '{}'", b.to_node, b.id)))?;
            if from == to {
                return invalid(format!("self-loop on branch '{}'", b.id));
            }
            let r = read_matrix(&b.r_ohm, "r_ohm", &b.id)?;
            let x = read_matrix(&b.x_ohm, "x_ohm", &b.id)?;
            check_branch_matrix(&r, "resistance", &b.id)?;
            check_branch_matrix(&x, "reactance", &b.id)?;
            if !(b.i_max_a > 0.0) || !b.i_max_a.is_finite() {
                return invalid(format!("branch '{}': i_max must be > 0", b.id));
            }
            let scale = |m: Matrix3| m.map(|row| row.map(|v| v / zb));
            raw_branches.push(Branch {
                id: b.id.clone(),
                from_node: from,
                to_node: to,
                resistance: scale(r),
                reactance: scale(x),
                i_max: b.i_max_a / ib,
                is_transformer,
            });
            Ok(())
        };
        if let Some(tr) = &file.transformer {
            if file_index.get(&tr.from_node) != Some(&slack) {
                return invalid(format!(
                    "transformer '{}' must start at the slack node",
                    tr.id
                ));
            }
            push_branch(tr, true)?;
        } else if meta.slack_level == SlackLevel::Mv {
            return invalid("missing transformer record for an MV slack");
        }
        for b in &file.branches {
            push_branch(b, false)?;
        }

        // Orient the tree from the slack, breadth-first.
        let n_nodes = file.nodes.len();
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for (bi, b) in raw_branches.iter().enumerate() {
            adjacency[b.from_node].push(bi);
            adjacency[b.to_node].push(bi);
        }
        if raw_branches.len() + 1 != n_nodes {
            let msg = if raw_branches.len() + 1 > n_nodes {
                "cycle detected: branch count must equal node count minus one"
            } else {
                "network is not connected"
            };
            return invalid(msg);
        }
        let mut order = Vec::with_capacity(n_nodes);
        let mut visited = vec![false; n_nodes];
        let mut parent_branch_file: Vec<Option<usize>> = vec![None; n_nodes];
        let mut queue = VecDeque::from([slack]);
        visited[slack] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adjacency[u]
                .iter()
                .copied()
                .filter(|&bi| Some(bi) != parent_branch_file[u])
                .collect();
            next.sort_by(|&a, &b| raw_branches[a].id.cmp(&raw_branches[b].id));
            for bi in next {
                let b = &raw_branches[bi];
                let v = if b.from_node == u { b.to_node } else { b.from_node };
                if b.from_node != u {
                    return invalid(format!(
                        "branch '{}' is oriented against the flow from the slack",
                        b.id
                    ));
                }
                if visited[v] {
                    return invalid(format!("cycle detected at node '{}'", file.nodes[v].id));
                }
                visited[v] = true;
                parent_branch_file[v] = Some(bi);
                queue.push_back(v);
            }
        }
        if order.len() != n_nodes {
            return invalid("network is not connected");
        }
        let mut new_index = vec![0usize; n_nodes];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        // Branches ordered by their to-node in BFS order.
        let mut branches: Vec<Branch> = order
            .iter()
            .skip(1)
            .map(|&old| {
                let mut b = raw_branches[parent_branch_file[old].expect("tree parent")].clone();
                b.from_node = new_index[b.from_node];
                b.to_node = new_index[b.to_node];
                b
            })
            .collect();
        let mut parent = vec![None; n_nodes];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for (bi, b) in branches.iter().enumerate() {
            parent[b.to_node] = Some(bi);
            children[b.from_node].push(bi);
        }
        for list in &mut children {
            list.sort_by(|&a, &b| branches[a].id.cmp(&branches[b].id));
        }
        branches.shrink_to_fit();

        let mut nodes: Vec<Node> = order
            .iter()
            .map(|&old| Node {
                id: file.nodes[old].id.clone(),
                kind: file.nodes[old].kind,
                has_pv_candidate: false,
            })
            .collect();
        let node_lookup: HashMap<String, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let resolve = |id: &str, what: &str| -> Result<usize, CaseError> {
            node_lookup
                .get(id)
                .copied()
                .ok_or_else(|| CaseError::Invalid(format!("dangling node id '{id}' in {what}")))
        };

        // Loads
        let load_files = match &file.loads {
            LoadsFile::Inline(v) => v.clone(),
            LoadsFile::Csv { csv } => {
                let p = PathBuf::from(csv);
                let p = if p.is_absolute() { p } else { base_dir.join(p) };
                read_load_csv(&p, horizon)?
            }
        };
        let sb = base.power_kva;
        let mut loads = Vec::new();
        let mut load_of_node = vec![None; n_nodes];
        for lf in &load_files {
            let node = resolve(&lf.node, "loads")?;
            if node == 0 {
                return invalid("slack node cannot carry a load");
            }
            if load_of_node[node].is_some() {
                return invalid(format!("duplicate load series for node '{}'", lf.node));
            }
            let series = |m: &BTreeMap<Phase, Vec<f64>>, what: &str| -> Result<[Vec<f64>; 3], CaseError> {
                let mut out: [Vec<f64>; 3] = Default::default();
                for ph in Phase::ALL {
                    let v = match m.get(&ph) {
                        Some(v) => v.clone(),
                        None => vec![0.0; horizon],
                    };
                    if v.len() != horizon {
                        return invalid(format!(
                            "load '{}': {what} phase {ph} has {} steps, horizon is {horizon}",
                            lf.node,
                            v.len()
                        ));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return invalid(format!("load '{}': non-finite {what}", lf.node));
                    }
                    out[ph.index()] = v.iter().map(|x| x / sb).collect();
                }
                Ok(out)
            };
            load_of_node[node] = Some(loads.len());
            loads.push(LoadSeries {
                node,
                p: series(&lf.p_kw, "p_kw")?,
                q: series(&lf.q_kvar, "q_kvar")?,
            });
        }

        // PV candidates
        let mut pv_candidates = Vec::new();
        for pf in &file.pv {
            let node = resolve(&pf.node, "pv")?;
            if node == 0 {
                return invalid("slack node cannot carry a PV candidate");
            }
            if nodes[node].has_pv_candidate {
                return invalid(format!("duplicate PV candidate at node '{}'", pf.node));
            }
            if pf.curve.len() != horizon {
                return invalid(format!(
                    "pv '{}': curve has {} steps, horizon is {horizon}",
                    pf.node,
                    pf.curve.len()
                ));
            }
            if pf.curve.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return invalid(format!("pv '{}': curve out of range [0, 1]", pf.node));
            }
            if let Some(p) = pf.p_max_kw {
                if !(p >= 0.0) || !p.is_finite() {
                    return invalid(format!("pv '{}': p_max must be >= 0", pf.node));
                }
            }
            if let Some(q) = pf.q_max_kvar {
                if !(q >= 0.0) || !q.is_finite() {
                    return invalid(format!("pv '{}': q_max must be >= 0", pf.node));
                }
            }
            nodes[node].has_pv_candidate = true;
            pv_candidates.push(PvCandidate {
                node,
                p_max: pf.p_max_kw.map(|p| p / sb),
                q_max: pf.q_max_kvar.map(|q| q / sb),
                curve: pf.curve.clone(),
            });
        }

        let slack_src = SlackSource {
            magnitude_pu: meta.slack_voltage_pu.unwrap_or(1.0),
            angles_deg: meta.slack_angles_deg.unwrap_or([0.0, -120.0, 120.0]),
        };
        if !(slack_src.magnitude_pu > 0.0) {
            return invalid("slack voltage must be positive");
        }

        Ok(NetworkCase {
            name: meta.name.clone(),
            nodes,
            branches,
            loads,
            pv_candidates,
            limits,
            horizon_steps: horizon,
            step_hours: meta.step_hours,
            base,
            slack: slack_src,
            slack_level: meta.slack_level,
            parent,
            children,
            node_lookup,
            load_of_node,
        })
    }
}

/// The transformer root branch when the case declares one.
pub fn transformer_as_branch(case: &NetworkCase) -> Option<&Branch> {
    case.transformer()
}
