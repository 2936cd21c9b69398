//! Recomputes seeds, rosters and ActiveSets from a board alone, and
//! compares them with recorded results.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::board::Board;
use crate::crypto::{Backend, NodeId};
use crate::protocol::{self, EpochParams, ProtocolError, ValidatedRoster};
use crate::seedchain::{self, Provenance, Seed, SeedChain, SeedError, SeedRecord};
use crate::selection::{ActiveSet, Threshold};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Seed(#[from] SeedError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayParams {
    pub threshold: Threshold,
    pub layers: u32,
    pub backend: Backend,
}

impl ReplayParams {
    fn epoch_params(&self) -> EpochParams {
        EpochParams {
            threshold: self.threshold,
            layers: self.layers,
            clients: 1,
            backend: self.backend,
            ..EpochParams::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochReplay {
    pub seed: SeedRecord,
    pub roster: ValidatedRoster,
    pub active: ActiveSet,
}

impl EpochReplay {
    pub fn epoch(&self) -> u64 {
        self.seed.epoch
    }
}

/// Replays epochs `0..=board.clock().epoch`.
pub fn replay_board(board: &Board, params: &ReplayParams) -> Result<Vec<EpochReplay>, ReplayError> {
    let mut chain = SeedChain::new();
    chain.push(seedchain::genesis_seed(board)?)?;
    let last = board.clock().epoch;
    let mut out: Vec<EpochReplay> = Vec::new();
    for epoch in 0..=last {
        if epoch > 0 {
            let prev = &out[epoch as usize - 1].roster;
            let record = seedchain::derive_seed(&chain, board, epoch, Some(prev), params.backend)?;
            chain.push(record)?;
        }
        let seed = chain.get(epoch).expect("pushed above").clone();
        let (roster, active) =
            protocol::client_select(board, epoch, &seed.seed, &params.epoch_params())?;
        out.push(EpochReplay {
            seed,
            roster,
            active,
        });
    }
    Ok(out)
}

/// One roster member's outcome in one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberRow {
    pub epoch: u64,
    pub node_id: NodeId,
    pub weight: u64,
    pub selected: bool,
    pub round: Option<u64>,
    pub layer: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRow {
    pub epoch: u64,
    pub seed: Seed,
    pub provenance: String,
    pub proposer: Option<NodeId>,
}

impl From<&SeedRecord> for SeedRow {
    fn from(r: &SeedRecord) -> Self {
        SeedRow {
            epoch: r.epoch,
            seed: r.seed,
            provenance: r.provenance.name().to_string(),
            proposer: match &r.provenance {
                Provenance::VrfProposed { proposer, .. } => Some(*proposer),
                _ => None,
            },
        }
    }
}

/// Rows in roster order.
pub fn member_rows(roster: &ValidatedRoster, active: &ActiveSet) -> Vec<MemberRow> {
    let rounds: BTreeMap<NodeId, u64> = active
        .selected
        .iter()
        .map(|s| (s.node_id, s.round))
        .collect();
    roster
        .members()
        .iter()
        .map(|m| MemberRow {
            epoch: roster.epoch,
            node_id: m.node_id,
            weight: m.weight,
            selected: rounds.contains_key(&m.node_id),
            round: rounds.get(&m.node_id).copied(),
            layer: active.layer_of.get(&m.node_id).copied(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochVerdict {
    pub epoch: u64,
    pub seed_match: bool,
    pub members_match: bool,
    /// Nodes whose recorded and recomputed rows differ or exist on one side only.
    pub differing_nodes: Vec<NodeId>,
}

impl EpochVerdict {
    pub fn is_match(&self) -> bool {
        self.seed_match && self.members_match
    }
}

pub fn compare_epoch(
    replayed: &EpochReplay,
    recorded_seed: Option<&SeedRow>,
    recorded_members: &[MemberRow],
) -> EpochVerdict {
    let expected = member_rows(&replayed.roster, &replayed.active);
    let by_id = |rows: &[MemberRow]| -> BTreeMap<NodeId, MemberRow> {
        rows.iter().map(|r| (r.node_id, r.clone())).collect()
    };
    let (a, b) = (by_id(&expected), by_id(recorded_members));
    let mut differing: Vec<NodeId> = a
        .keys()
        .chain(b.keys())
        .filter(|id| a.get(id) != b.get(id))
        .copied()
        .collect();
    differing.sort();
    differing.dedup();
    EpochVerdict {
        epoch: replayed.epoch(),
        seed_match: recorded_seed == Some(&SeedRow::from(&replayed.seed)),
        members_match: expected == recorded_members,
        differing_nodes: differing,
    }
}
