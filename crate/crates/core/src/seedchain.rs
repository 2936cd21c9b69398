//! Per-epoch seeds: commit-and-reveal genesis, then VRF proposals by the
//! previous epoch's minimum-commitment node with a hash fallback.

use thiserror::Error;

use crate::board::{Board, BoardError, EntryKind, Submission};
use crate::codec::{encode_u64, DecodeError, Decoder, Encoder};
use crate::crypto::{digest, digest_parts, Backend, KeyPair, NodeId, Vrf, VrfOutput};
use crate::roster::ValidatedRoster;

pub const SEED_LEN: usize = 32;
pub type Seed = [u8; SEED_LEN];

#[derive(Debug, Error)]
pub enum SeedError {
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error("genesis reveal without a prior commitment from {0}")]
    RevealWithoutCommit(NodeId),
    #[error("revealed nonce does not match the commitment of {0}")]
    RevealMismatch(NodeId),
    #[error("genesis failed: no valid reveals")]
    NoValidReveals,
    #[error("seed chain has no record for epoch {0}")]
    MissingPredecessor(u64),
    #[error("seed chain expects epoch {expected}, got {got}")]
    Gap { expected: u64, got: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Genesis,
    VrfProposed {
        proposer: NodeId,
        output: Vec<u8>,
        proof: Vec<u8>,
    },
    Fallback,
}

impl Provenance {
    pub fn name(&self) -> &'static str {
        match self {
            Provenance::Genesis => "genesis",
            Provenance::VrfProposed { .. } => "vrf-proposed",
            Provenance::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRecord {
    pub epoch: u64,
    pub seed: Seed,
    pub provenance: Provenance,
}

/// Gap-free sequence of seed records starting at epoch 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeedChain {
    records: Vec<SeedRecord>,
}

impl SeedChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: SeedRecord) -> Result<(), SeedError> {
        let expected = self.records.len() as u64;
        if record.epoch != expected {
            return Err(SeedError::Gap {
                expected,
                got: record.epoch,
            });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, epoch: u64) -> Option<&SeedRecord> {
        usize::try_from(epoch)
            .ok()
            .and_then(|i| self.records.get(i))
    }

    pub fn seed(&self, epoch: u64) -> Option<&Seed> {
        self.get(epoch).map(|r| &r.seed)
    }

    pub fn records(&self) -> &[SeedRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn genesis_commit(key: &KeyPair, nonce: &Seed, board: &mut Board) -> Result<u64, SeedError> {
    let epoch = board.clock().epoch;
    let payload = digest(nonce).to_vec();
    Ok(board.post_entry(Submission::signed(
        key,
        epoch,
        EntryKind::GenesisCommit,
        payload,
    ))?)
}

pub fn genesis_reveal(key: &KeyPair, nonce: &Seed, board: &mut Board) -> Result<u64, SeedError> {
    let epoch = board.clock().epoch;
    let committed = board
        .read_epoch(epoch, EntryKind::GenesisCommit)
        .into_iter()
        .find(|e| e.author == key.node_id())
        .ok_or(SeedError::RevealWithoutCommit(key.node_id()))?;
    if committed.payload != digest(nonce) {
        return Err(SeedError::RevealMismatch(key.node_id()));
    }
    Ok(board.post_entry(Submission::signed(
        key,
        epoch,
        EntryKind::GenesisReveal,
        nonce.to_vec(),
    ))?)
}

/// XOR of every reveal that opens its author's commitment.
pub fn genesis_seed(board: &Board) -> Result<SeedRecord, SeedError> {
    let epoch = 0;
    let commits = board.read_epoch(epoch, EntryKind::GenesisCommit);
    let mut seed = [0u8; SEED_LEN];
    let mut valid = 0usize;
    for reveal in board.read_epoch(epoch, EntryKind::GenesisReveal) {
        let opens = commits
            .iter()
            .any(|c| c.author == reveal.author && c.payload == digest(&reveal.payload));
        if !opens || reveal.payload.len() != SEED_LEN {
            continue;
        }
        for (s, r) in seed.iter_mut().zip(&reveal.payload) {
            *s ^= r;
        }
        valid += 1;
    }
    if valid == 0 {
        return Err(SeedError::NoValidReveals);
    }
    Ok(SeedRecord {
        epoch,
        seed,
        provenance: Provenance::Genesis,
    })
}

/// First member of the previous epoch's sorted roster (minimum commitment).
pub fn elect_proposer(prev_roster: &ValidatedRoster) -> Option<NodeId> {
    prev_roster.members().first().map(|m| m.node_id)
}

/// VRF input for epoch `e`: `seed_{e-1} || encode(e)`.
pub fn proposal_input(prev_seed: &Seed, epoch: u64) -> Vec<u8> {
    let mut input = prev_seed.to_vec();
    input.extend_from_slice(&encode_u64(epoch));
    input
}

pub fn fallback_seed(prev_seed: &Seed, epoch: u64) -> Seed {
    digest_parts(&[prev_seed, &encode_u64(epoch)])
}

/// Fixed-width seed from a VRF output.
pub fn seed_from_output(output: &[u8]) -> Seed {
    match output.try_into() {
        Ok(seed) => seed,
        Err(_) => digest(output),
    }
}

pub fn encode_proposal(output: &VrfOutput) -> Vec<u8> {
    Encoder::new()
        .bytes(&output.commitment)
        .bytes(&output.proof)
        .finish()
}

pub fn decode_proposal(payload: &[u8]) -> Result<VrfOutput, DecodeError> {
    let mut d = Decoder::new(payload);
    let commitment = d.bytes()?.to_vec();
    let proof = d.bytes()?.to_vec();
    d.finish()?;
    Ok(VrfOutput { commitment, proof })
}

/// Posts `VRF(sk_g, seed_{e-1} || e)` as this epoch's seed proposal.
pub fn propose_seed(
    key: &KeyPair,
    prev_seed: &Seed,
    epoch: u64,
    board: &mut Board,
    backend: Backend,
) -> Result<u64, SeedError> {
    let output = backend.prove(key, &proposal_input(prev_seed, epoch));
    post_proposal(key, &output, epoch, board)
}

/// Posts an arbitrary proposal payload; used by misbehaving proposers.
pub fn post_proposal(
    key: &KeyPair,
    output: &VrfOutput,
    epoch: u64,
    board: &mut Board,
) -> Result<u64, SeedError> {
    Ok(board.post_entry(Submission::signed(
        key,
        epoch,
        EntryKind::SeedProposal,
        encode_proposal(output),
    ))?)
}

/// Seed for epoch `e` from the board: the elected proposer's valid proposal
/// if one precedes the epoch's first commitment, otherwise the hash fallback.
pub fn derive_seed(
    chain: &SeedChain,
    board: &Board,
    epoch: u64,
    prev_roster: Option<&ValidatedRoster>,
    backend: Backend,
) -> Result<SeedRecord, SeedError> {
    let prev_seed = epoch
        .checked_sub(1)
        .and_then(|prev| chain.seed(prev))
        .ok_or(SeedError::MissingPredecessor(epoch.saturating_sub(1)))?;

    let first_commit = board
        .read_epoch(epoch, EntryKind::Commit)
        .first()
        .map(|e| e.sequence);
    let proposer = prev_roster.and_then(elect_proposer);

    let proposal = proposer.and_then(|g| {
        let entry = board
            .read_epoch(epoch, EntryKind::SeedProposal)
            .into_iter()
            .find(|e| e.author == g)?;
        if first_commit.is_some_and(|c| c < entry.sequence) {
            return None;
        }
        let output = decode_proposal(&entry.payload).ok()?;
        backend
            .verify(&g, &proposal_input(prev_seed, epoch), &output)
            .then_some((g, output))
    });

    Ok(match proposal {
        Some((proposer, output)) => SeedRecord {
            epoch,
            seed: seed_from_output(&output.commitment),
            provenance: Provenance::VrfProposed {
                proposer,
                output: output.commitment,
                proof: output.proof,
            },
        },
        None => SeedRecord {
            epoch,
            seed: fallback_seed(prev_seed, epoch),
            provenance: Provenance::Fallback,
        },
    })
}

/// Re-checks a record against its predecessor.
pub fn verify_record(record: &SeedRecord, prev_seed: Option<&Seed>, backend: Backend) -> bool {
    match (&record.provenance, prev_seed) {
        (Provenance::Genesis, _) => record.epoch == 0,
        (Provenance::Fallback, Some(prev)) => record.seed == fallback_seed(prev, record.epoch),
        (
            Provenance::VrfProposed {
                proposer,
                output,
                proof,
            },
            Some(prev),
        ) => {
            let out = VrfOutput {
                commitment: output.clone(),
                proof: proof.clone(),
            };
            record.seed == seed_from_output(output)
                && backend.verify(proposer, &proposal_input(prev, record.epoch), &out)
        }
        (_, None) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::{Clock, Phase};
    use crate::crypto::keygen;
    use crate::roster::RosterMember;

    fn genesis_board() -> Board {
        Board::with_genesis()
    }

    fn reveal_phase(board: &mut Board) {
        board.advance_to(Clock::new(0, Phase::GenesisReveal));
    }

    #[test]
    fn commit_then_reveal() {
        let key = keygen(Some(b"g1"));
        let nonce = [5u8; 32];
        let mut board = genesis_board();
        genesis_commit(&key, &nonce, &mut board).unwrap();
        reveal_phase(&mut board);
        genesis_reveal(&key, &nonce, &mut board).unwrap();
        let record = genesis_seed(&board).unwrap();
        assert_eq!(record.seed, nonce);
        assert_eq!(record.provenance, Provenance::Genesis);
    }

    #[test]
    fn reveal_must_match_commitment() {
        let key = keygen(Some(b"g1"));
        let mut board = genesis_board();
        genesis_commit(&key, &[5u8; 32], &mut board).unwrap();
        reveal_phase(&mut board);
        assert!(matches!(
            genesis_reveal(&key, &[6u8; 32], &mut board),
            Err(SeedError::RevealMismatch(_))
        ));
    }

    #[test]
    fn reveal_before_commit_rejected() {
        let key = keygen(Some(b"g1"));
        let mut board = genesis_board();
        reveal_phase(&mut board);
        assert!(matches!(
            genesis_reveal(&key, &[5u8; 32], &mut board),
            Err(SeedError::RevealWithoutCommit(_))
        ));
    }

    #[test]
    fn duplicate_genesis_commit_rejected() {
        let key = keygen(Some(b"g1"));
        let mut board = genesis_board();
        genesis_commit(&key, &[5u8; 32], &mut board).unwrap();
        assert!(matches!(
            genesis_commit(&key, &[6u8; 32], &mut board),
            Err(SeedError::Board(BoardError::DuplicateEntry { .. }))
        ));
    }

    #[test]
    fn genesis_xor_and_exclusions() {
        let keys: Vec<_> = (0..4u8).map(|i| keygen(Some(&[b'k', i]))).collect();
        let n1 = [0x0fu8; 32];
        let n2 = [0x33u8; 32];
        let mut board = genesis_board();
        genesis_commit(&keys[0], &n1, &mut board).unwrap();
        genesis_commit(&keys[1], &n2, &mut board).unwrap();
        genesis_commit(&keys[2], &[9u8; 32], &mut board).unwrap(); // never reveals
        reveal_phase(&mut board);
        genesis_reveal(&keys[0], &n1, &mut board).unwrap();
        genesis_reveal(&keys[1], &n2, &mut board).unwrap();
        // An unchecked reveal that does not open any commitment is ignored.
        board
            .post_entry(Submission::signed(
                &keys[3],
                0,
                EntryKind::GenesisReveal,
                vec![1u8; 32],
            ))
            .unwrap();
        assert_eq!(genesis_seed(&board).unwrap().seed, [0x0f ^ 0x33; 32]);
    }

    #[test]
    fn identical_reveals_cancel() {
        let a = keygen(Some(b"a"));
        let b = keygen(Some(b"b"));
        let n = [0x42u8; 32];
        let mut board = genesis_board();
        genesis_commit(&a, &n, &mut board).unwrap();
        genesis_commit(&b, &n, &mut board).unwrap();
        reveal_phase(&mut board);
        genesis_reveal(&a, &n, &mut board).unwrap();
        genesis_reveal(&b, &n, &mut board).unwrap();
        assert_eq!(genesis_seed(&board).unwrap().seed, [0u8; 32]);
    }

    #[test]
    fn genesis_without_reveals_fails() {
        let board = genesis_board();
        assert!(matches!(
            genesis_seed(&board),
            Err(SeedError::NoValidReveals)
        ));
    }

    fn roster_with(ids: &[NodeId]) -> ValidatedRoster {
        let members = ids
            .iter()
            .map(|id| RosterMember::new(*id, 1, id.as_bytes().to_vec()))
            .collect();
        ValidatedRoster::from_members(0, [0; 32], members)
    }

    #[test]
    fn proposer_is_minimum_commitment() {
        let ids: Vec<_> = (0..5u8).map(|i| keygen(Some(&[i])).node_id()).collect();
        let roster = roster_with(&ids);
        assert_eq!(elect_proposer(&roster), Some(roster.members()[0].node_id));
        let min = ids
            .iter()
            .min_by_key(|id| crate::crypto::hash_to_int(id.as_bytes()))
            .unwrap();
        assert_eq!(elect_proposer(&roster), Some(*min));
        assert_eq!(elect_proposer(&roster_with(&ids[..1])), Some(ids[0]));
        assert_eq!(elect_proposer(&roster_with(&[])), None);
    }

    fn chain_with_genesis(seed: Seed) -> SeedChain {
        let mut chain = SeedChain::new();
        chain
            .push(SeedRecord {
                epoch: 0,
                seed,
                provenance: Provenance::Genesis,
            })
            .unwrap();
        chain
    }

    fn setup_board(epoch: u64) -> Board {
        Board::starting_at(Clock::new(epoch, Phase::Setup))
    }

    #[test]
    fn derive_uses_valid_proposal() {
        for backend in [Backend::Mock, Backend::Ecvrf] {
            let g = keygen(Some(b"proposer"));
            let chain = chain_with_genesis([3u8; 32]);
            let roster = roster_with(&[g.node_id()]);
            let mut board = setup_board(1);
            propose_seed(&g, &[3u8; 32], 1, &mut board, backend).unwrap();
            let record = derive_seed(&chain, &board, 1, Some(&roster), backend).unwrap();
            assert!(matches!(record.provenance, Provenance::VrfProposed { .. }));
            assert!(verify_record(&record, Some(&[3u8; 32]), backend));
            let expected = backend.prove(&g, &proposal_input(&[3u8; 32], 1)).commitment;
            assert_eq!(record.seed, seed_from_output(&expected));
        }
    }

    #[test]
    fn derive_falls_back_without_proposal() {
        let chain = chain_with_genesis([3u8; 32]);
        let g = keygen(Some(b"proposer"));
        let roster = roster_with(&[g.node_id()]);
        let board = setup_board(1);
        let record = derive_seed(&chain, &board, 1, Some(&roster), Backend::Mock).unwrap();
        assert_eq!(record.provenance, Provenance::Fallback);
        let mut input = [3u8; 32].to_vec();
        input.extend_from_slice(&1u64.to_be_bytes());
        assert_eq!(record.seed, digest(&input));
        assert!(verify_record(&record, Some(&[3u8; 32]), Backend::Mock));
    }

    #[test]
    fn corrupted_or_misbound_proposals_fall_back() {
        let backend = Backend::Mock;
        let g = keygen(Some(b"proposer"));
        let chain = chain_with_genesis([3u8; 32]);
        let roster = roster_with(&[g.node_id()]);

        let mut corrupt = backend.prove(&g, &proposal_input(&[3u8; 32], 1));
        corrupt.proof[0] ^= 1;
        let mut board = setup_board(1);
        post_proposal(&g, &corrupt, 1, &mut board).unwrap();
        let r = derive_seed(&chain, &board, 1, Some(&roster), backend).unwrap();
        assert_eq!(r.provenance, Provenance::Fallback);

        // Proposal computed over the wrong epoch encoding.
        let mut board = setup_board(1);
        propose_seed(&g, &[3u8; 32], 2, &mut board, backend).unwrap_err();
        let wrong = backend.prove(&g, &proposal_input(&[3u8; 32], 2));
        post_proposal(&g, &wrong, 1, &mut board).unwrap();
        let r = derive_seed(&chain, &board, 1, Some(&roster), backend).unwrap();
        assert_eq!(r.provenance, Provenance::Fallback);
    }

    #[test]
    fn proposals_from_non_elected_nodes_are_ignored() {
        let backend = Backend::Mock;
        let g = keygen(Some(b"proposer"));
        let intruder = keygen(Some(b"intruder"));
        let chain = chain_with_genesis([3u8; 32]);
        let roster = roster_with(&[g.node_id()]);
        let mut board = setup_board(1);
        propose_seed(&intruder, &[3u8; 32], 1, &mut board, backend).unwrap();
        let r = derive_seed(&chain, &board, 1, Some(&roster), backend).unwrap();
        assert_eq!(r.provenance, Provenance::Fallback);
    }

    #[test]
    fn late_proposal_after_first_commit_is_ignored() {
        let backend = Backend::Mock;
        let g = keygen(Some(b"proposer"));
        let chain = chain_with_genesis([3u8; 32]);
        let roster = roster_with(&[g.node_id()]);
        let mut board = setup_board(1);
        board
            .post_entry(Submission::signed(&g, 1, EntryKind::Commit, vec![0]))
            .unwrap();
        propose_seed(&g, &[3u8; 32], 1, &mut board, backend).unwrap();
        let r = derive_seed(&chain, &board, 1, Some(&roster), backend).unwrap();
        assert_eq!(r.provenance, Provenance::Fallback);
    }

    #[test]
    fn derive_requires_predecessor() {
        let chain = SeedChain::new();
        let board = setup_board(1);
        assert!(matches!(
            derive_seed(&chain, &board, 1, None, Backend::Mock),
            Err(SeedError::MissingPredecessor(0))
        ));
    }

    #[test]
    fn chain_rejects_gaps() {
        let mut chain = chain_with_genesis([0; 32]);
        let err = chain.push(SeedRecord {
            epoch: 2,
            seed: [0; 32],
            provenance: Provenance::Fallback,
        });
        assert!(matches!(
            err,
            Err(SeedError::Gap {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn seeds_are_fixed_width() {
        assert_eq!(seed_from_output(&[1u8; 32]), [1u8; 32]);
        assert_eq!(seed_from_output(&[1u8; 64]), digest(&[1u8; 64]));
    }
}
