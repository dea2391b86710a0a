//! Phase assignments for PV candidates and the four binary-free ways of
//! choosing them.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::StrategyError;
use crate::network::{NetworkCase, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    PerTimestep,
    Fixed,
}

/// Connection phase of each PV candidate. `choice[pv]` holds one phase per
/// timestep in per-timestep mode and a single phase in fixed mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseAssignment {
    pub mode: AssignmentMode,
    pub choice: Vec<Vec<Phase>>,
}

impl PhaseAssignment {
    pub fn fixed(phases: Vec<Phase>) -> Self {
        PhaseAssignment {
            mode: AssignmentMode::Fixed,
            choice: phases.into_iter().map(|p| vec![p]).collect(),
        }
    }

    pub fn per_timestep(choice: Vec<Vec<Phase>>) -> Self {
        PhaseAssignment {
            mode: AssignmentMode::PerTimestep,
            choice,
        }
    }

    /// Same phase for every candidate and timestep.
    pub fn uniform(case: &NetworkCase, phase: Phase) -> Self {
        Self::fixed(vec![phase; case.pv_candidates.len()])
    }

    pub fn pv_count(&self) -> usize {
        self.choice.len()
    }

    pub fn phase_at(&self, pv: usize, t: usize) -> Option<Phase> {
        let row = self.choice.get(pv)?;
        match self.mode {
            AssignmentMode::Fixed => row.first().copied(),
            AssignmentMode::PerTimestep => row.get(t).copied(),
        }
    }

    /// Expand to per-timestep form over `horizon` steps.
    pub fn expand(&self, horizon: usize) -> PhaseAssignment {
        match self.mode {
            AssignmentMode::PerTimestep => self.clone(),
            AssignmentMode::Fixed => PhaseAssignment::per_timestep(
                self.choice.iter().map(|r| vec![r[0]; horizon]).collect(),
            ),
        }
    }

    /// Write as CSV: `node,t,phase` (per-timestep) or `node,phase` (fixed).
    pub fn write_csv<W: Write>(&self, case: &NetworkCase, out: W) -> Result<(), StrategyError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| StrategyError::Csv(e.to_string());
        match self.mode {
            AssignmentMode::Fixed => {
                w.write_record(["node", "phase"]).map_err(err)?;
                for (pv, row) in self.choice.iter().enumerate() {
                    let node = &case.nodes[case.pv_candidates[pv].node].id;
                    w.write_record([node.as_str(), row[0].as_str()]).map_err(err)?;
                }
            }
            AssignmentMode::PerTimestep => {
                w.write_record(["node", "t", "phase"]).map_err(err)?;
                for (pv, row) in self.choice.iter().enumerate() {
                    let node = &case.nodes[case.pv_candidates[pv].node].id;
                    for (t, ph) in row.iter().enumerate() {
                        w.write_record([node.as_str(), &t.to_string(), ph.as_str()])
                            .map_err(err)?;
                    }
                }
            }
        }
        w.flush().map_err(|e| StrategyError::Csv(e.to_string()))
    }

    /// Read the CSV written by [`PhaseAssignment::write_csv`]; the mode is
    /// inferred from the header.
    pub fn read_csv<R: Read>(case: &NetworkCase, input: R) -> Result<Self, StrategyError> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r
            .headers()
            .map_err(|e| StrategyError::Csv(e.to_string()))?
            .clone();
        let fixed = match headers.iter().collect::<Vec<_>>().as_slice() {
            ["node", "phase"] => true,
            ["node", "t", "phase"] => false,
            other => return Err(StrategyError::Csv(format!("unexpected header {other:?}"))),
        };
        let n_pv = case.pv_candidates.len();
        let horizon = case.horizon_steps;
        let mut choice: Vec<Vec<Option<Phase>>> =
            vec![vec![None; if fixed { 1 } else { horizon }]; n_pv];
        for rec in r.records() {
            let rec = rec.map_err(|e| StrategyError::Csv(e.to_string()))?;
            let node = &rec[0];
            let pv = case
                .pv_candidates
                .iter()
                .position(|c| case.nodes[c.node].id == node)
                .ok_or_else(|| StrategyError::Csv(format!("'{node}' is not a PV candidate")))?;
            let (t, phase) = if fixed {
                (0, &rec[1])
            } else {
                let t: usize = rec[1]
                    .parse()
                    .map_err(|_| StrategyError::Csv(format!("bad timestep '{}'", &rec[1])))?;
                (t, &rec[2])
            };
            let phase = Phase::from_str(phase).map_err(StrategyError::Csv)?;
            let slot = choice[pv]
                .get_mut(t)
                .ok_or_else(|| StrategyError::Csv(format!("t={t} outside horizon")))?;
            if slot.replace(phase).is_some() {
                return Err(StrategyError::Csv(format!("duplicate entry for '{node}' t={t}")));
            }
        }
        let choice = choice
            .into_iter()
            .enumerate()
            .map(|(pv, row)| {
                row.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| {
                    StrategyError::Csv(format!(
                        "assignment incomplete for '{}'",
                        case.nodes[case.pv_candidates[pv].node].id
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PhaseAssignment {
            mode: if fixed {
                AssignmentMode::Fixed
            } else {
                AssignmentMode::PerTimestep
            },
            choice,
        })
    }
}

impl fmt::Display for PhaseAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, row) in self.choice.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            for p in row {
                f.write_str(p.as_str())?;
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng) -> Phase {
    Phase::from_index(rng.random_range(0..3)).expect("index below three")
}

/// Index of the largest value; the earliest phase wins ties.
pub fn first_argmax(values: [f64; 3]) -> Phase {
    let mut best = Phase::A;
    for ph in [Phase::B, Phase::C] {
        if values[ph.index()] > values[best.index()] {
            best = ph;
        }
    }
    best
}

/// Independent uniform draw per `(pv, t)` from ChaCha8 seeded with `seed`;
/// draws are taken candidate by candidate, timesteps in order.
pub fn assign_random_per_step(case: &NetworkCase, seed: u64) -> PhaseAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choice = case
        .pv_candidates
        .iter()
        .map(|_| (0..case.horizon_steps).map(|_| draw(&mut rng)).collect())
        .collect();
    PhaseAssignment::per_timestep(choice)
}

/// One uniform draw per candidate, kept for the whole horizon.
pub fn assign_random_fixed(case: &NetworkCase, seed: u64) -> PhaseAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PhaseAssignment::fixed(case.pv_candidates.iter().map(|_| draw(&mut rng)).collect())
}

/// Connect each candidate to its node's most loaded phase at every step.
pub fn assign_most_loaded_per_step(case: &NetworkCase) -> PhaseAssignment {
    let choice = case
        .pv_candidates
        .iter()
        .map(|pv| {
            (0..case.horizon_steps)
                .map(|t| first_argmax(Phase::ALL.map(|ph| case.p_load(pv.node, ph, t))))
                .collect()
        })
        .collect();
    PhaseAssignment::per_timestep(choice)
}

/// Connect each candidate to the phase with the largest demand summed over
/// the horizon.
pub fn assign_peak_energy_fixed(case: &NetworkCase) -> PhaseAssignment {
    PhaseAssignment::fixed(
        case.pv_candidates
            .iter()
            .map(|pv| {
                first_argmax(Phase::ALL.map(|ph| {
                    (0..case.horizon_steps)
                        .map(|t| case.p_load(pv.node, ph, t))
                        .sum()
                }))
            })
            .collect(),
    )
}
