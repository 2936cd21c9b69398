//! Node agents for the post and setup phases, the client-side validation
//! pipeline, and the per-epoch orchestration that ties them together.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::board::{Board, BoardEntry, BoardError, Clock, EntryKind, Phase, Submission};
use crate::codec::{encode_u64, DecodeError, Decoder, Encoder};
use crate::crypto::{self, Backend, KeyPair, NodeId, Signature, Vrf, VrfOutput};
use crate::seedchain::{self, Seed, SeedChain, SeedError, SeedRecord};
use crate::selection::{self, ActiveSet, SelectionError, Threshold};

pub use crate::roster::{RejectionReason, RosterMember, ValidatedRoster};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Seed(#[from] SeedError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("weight must be at least 1")]
    ZeroWeight,
    #[error("board clock {board} is past epoch {epoch}")]
    ClockAhead { board: Clock, epoch: u64 },
    #[error("no seed available for epoch {0}")]
    NoSeed(u64),
}

/// A registration `<pk, w, Sign_sk(w)>`. The public key is the board author.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePost {
    pub public_key: NodeId,
    pub weight: u64,
    pub signature: Signature,
}

impl NodePost {
    pub fn signed_bytes(weight: u64) -> [u8; 8] {
        encode_u64(weight)
    }

    pub fn new(key: &KeyPair, weight: u64) -> Self {
        Self {
            public_key: key.node_id(),
            weight,
            signature: key.sign(&Self::signed_bytes(weight)),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        Encoder::new()
            .u64(self.weight)
            .bytes(self.signature.as_bytes())
            .finish()
    }

    pub fn decode(author: NodeId, payload: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(payload);
        let weight = d.u64()?;
        let signature = Signature::from_slice(&d.array::<64>()?).expect("64 bytes");
        d.finish()?;
        Ok(Self {
            public_key: author,
            weight,
            signature,
        })
    }

    pub fn verify(&self) -> bool {
        crypto::verify_sig(
            &self.public_key,
            &Self::signed_bytes(self.weight),
            &self.signature,
        )
    }
}

/// A commitment `<y, pi, Sign_sk(y || pi)>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitmentRecord {
    pub node_id: NodeId,
    pub commitment: Vec<u8>,
    pub proof: Vec<u8>,
    pub signature: Signature,
}

impl CommitmentRecord {
    pub fn signed_bytes(commitment: &[u8], proof: &[u8]) -> Vec<u8> {
        Encoder::new().bytes(commitment).bytes(proof).finish()
    }

    pub fn new(key: &KeyPair, output: VrfOutput) -> Self {
        let signature = key.sign(&Self::signed_bytes(&output.commitment, &output.proof));
        Self {
            node_id: key.node_id(),
            commitment: output.commitment,
            proof: output.proof,
            signature,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        Encoder::new()
            .bytes(&self.commitment)
            .bytes(&self.proof)
            .bytes(self.signature.as_bytes())
            .finish()
    }

    pub fn decode(author: NodeId, payload: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(payload);
        let commitment = d.bytes()?.to_vec();
        let proof = d.bytes()?.to_vec();
        let signature = Signature::from_slice(&d.array::<64>()?).expect("64 bytes");
        d.finish()?;
        Ok(Self {
            node_id: author,
            commitment,
            proof,
            signature,
        })
    }

    pub fn verify_signature(&self) -> bool {
        crypto::verify_sig(
            &self.node_id,
            &Self::signed_bytes(&self.commitment, &self.proof),
            &self.signature,
        )
    }

    pub fn output(&self) -> VrfOutput {
        VrfOutput {
            commitment: self.commitment.clone(),
            proof: self.proof.clone(),
        }
    }
}

/// Registers `key` with `weight`; effective from epoch `epoch + 1`.
pub fn node_post(
    key: &KeyPair,
    weight: u64,
    board: &mut Board,
    epoch: u64,
) -> Result<u64, ProtocolError> {
    if weight == 0 {
        return Err(ProtocolError::ZeroWeight);
    }
    post_registration(board, key, epoch, NodePost::new(key, weight))
}

/// Posts a registration record as-is.
pub fn post_registration(
    board: &mut Board,
    key: &KeyPair,
    epoch: u64,
    post: NodePost,
) -> Result<u64, ProtocolError> {
    Ok(board.post_entry(Submission::signed(
        key,
        epoch,
        EntryKind::Post,
        post.encode(),
    ))?)
}

/// Commits `VRF(sk, seed)` for `epoch`.
pub fn node_setup(
    key: &KeyPair,
    board: &mut Board,
    epoch: u64,
    seed: &Seed,
    backend: Backend,
) -> Result<u64, ProtocolError> {
    let record = CommitmentRecord::new(key, backend.prove(key, seed));
    post_commitment(board, key, epoch, &record)
}

pub fn post_commitment(
    board: &mut Board,
    key: &KeyPair,
    epoch: u64,
    record: &CommitmentRecord,
) -> Result<u64, ProtocolError> {
    Ok(board.post_entry(Submission::signed(
        key,
        epoch,
        EntryKind::Commit,
        record.encode(),
    ))?)
}

/// Latest registration per author posted strictly before `epoch`.
fn registrations(board: &Board, epoch: u64) -> BTreeMap<NodeId, &BoardEntry> {
    let mut latest = BTreeMap::new();
    for entry in board.entries() {
        if entry.kind == EntryKind::Post && entry.epoch < epoch {
            latest.insert(entry.author, entry);
        }
    }
    latest
}

fn check_registration(entry: &BoardEntry) -> Result<u64, RejectionReason> {
    let post =
        NodePost::decode(entry.author, &entry.payload).map_err(|_| RejectionReason::Malformed)?;
    if !post.verify() {
        return Err(RejectionReason::BadPostSignature);
    }
    if post.weight == 0 {
        return Err(RejectionReason::ZeroWeight);
    }
    Ok(post.weight)
}

fn check_commitment(
    entry: &BoardEntry,
    seed: &Seed,
    backend: Backend,
) -> Result<Vec<u8>, RejectionReason> {
    let record = CommitmentRecord::decode(entry.author, &entry.payload)
        .map_err(|_| RejectionReason::Malformed)?;
    if !record.verify_signature() {
        return Err(RejectionReason::BadCommitSignature);
    }
    if !backend.verify(&record.node_id, seed, &record.output()) {
        return Err(RejectionReason::InvalidVrf);
    }
    Ok(record.commitment)
}

/// Builds the validated, sorted roster for `epoch` from public board data.
pub fn client_collect(board: &Board, epoch: u64, seed: &Seed, backend: Backend) -> ValidatedRoster {
    let posts = registrations(board, epoch);
    let commits: BTreeMap<NodeId, &BoardEntry> = board
        .read_epoch(epoch, EntryKind::Commit)
        .into_iter()
        .map(|e| (e.author, e))
        .collect();

    let mut candidates: Vec<NodeId> = posts.keys().chain(commits.keys()).copied().collect();
    candidates.sort();
    candidates.dedup();

    let mut members = Vec::new();
    let mut rejected = Vec::new();
    for id in candidates {
        let verdict = (|| {
            let post = posts.get(&id).ok_or(RejectionReason::MissingPost)?;
            let weight = check_registration(post)?;
            let commit = commits.get(&id).ok_or(RejectionReason::MissingCommitment)?;
            let commitment = check_commitment(commit, seed, backend)?;
            Ok(RosterMember::new(id, weight, commitment))
        })();
        match verdict {
            Ok(member) => members.push(member),
            Err(reason) => rejected.push((id, reason)),
        }
    }
    ValidatedRoster::new(epoch, *seed, members, rejected)
}

/// Roster of `nodes` all committing honestly over `seed`, built without a
/// board. Equal to what [`client_collect`] returns for the same commitments.
pub fn honest_roster(nodes: &[(KeyPair, u64)], seed: &Seed, backend: Backend) -> ValidatedRoster {
    let members = nodes
        .iter()
        .map(|(k, w)| RosterMember::new(k.node_id(), *w, backend.prove(k, seed).commitment))
        .collect();
    ValidatedRoster::from_members(0, *seed, members)
}

/// What a node does in each phase.
pub trait Agent {
    fn keypair(&self) -> &KeyPair;

    fn node_id(&self) -> NodeId {
        self.keypair().node_id()
    }

    fn post(&self, board: &mut Board, epoch: u64) -> Result<(), ProtocolError>;

    fn setup(
        &self,
        board: &mut Board,
        epoch: u64,
        seed: &Seed,
        backend: Backend,
    ) -> Result<(), ProtocolError>;
}

#[derive(Debug, Clone)]
pub struct HonestNode {
    pub key: KeyPair,
    pub weight: u64,
}

impl Agent for HonestNode {
    fn keypair(&self) -> &KeyPair {
        &self.key
    }

    fn post(&self, board: &mut Board, epoch: u64) -> Result<(), ProtocolError> {
        node_post(&self.key, self.weight, board, epoch).map(drop)
    }

    fn setup(
        &self,
        board: &mut Board,
        epoch: u64,
        seed: &Seed,
        backend: Backend,
    ) -> Result<(), ProtocolError> {
        node_setup(&self.key, board, epoch, seed, backend).map(drop)
    }
}

/// How the elected seed proposer behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProposerMode {
    #[default]
    Honest,
    /// Never posts a proposal.
    Silent,
    /// Posts a proposal whose proof does not verify.
    Corrupt,
}

impl std::str::FromStr for ProposerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "honest" => Ok(ProposerMode::Honest),
            "silent" => Ok(ProposerMode::Silent),
            "corrupt" => Ok(ProposerMode::Corrupt),
            other => Err(format!("unknown proposer mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochParams {
    pub threshold: Threshold,
    pub layers: u32,
    /// Independent client observers; at least one.
    pub clients: usize,
    pub backend: Backend,
    pub proposer: ProposerMode,
}

impl Default for EpochParams {
    fn default() -> Self {
        Self {
            threshold: Threshold::new(1, 2).expect("valid"),
            layers: 1,
            clients: 2,
            backend: Backend::default(),
            proposer: ProposerMode::Honest,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EpochTiming {
    pub post: Duration,
    pub setup_total: Duration,
    /// Slowest single node's setup (one VRF proof plus signing).
    pub setup_max_node: Duration,
    /// Slowest client's collect + select + layer assignment.
    pub select_max_client: Duration,
}

#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub epoch: u64,
    pub seed: SeedRecord,
    pub roster: ValidatedRoster,
    /// One entry per client, in client order.
    pub active_sets: Vec<ActiveSet>,
    pub degenerate: bool,
    pub timing: EpochTiming,
}

impl EpochOutcome {
    pub fn clients_agree(&self) -> bool {
        self.active_sets.windows(2).all(|w| w[0] == w[1])
    }

    pub fn active_set(&self) -> &ActiveSet {
        &self.active_sets[0]
    }
}

/// One client's select phase: collect, select, place in layers.
pub fn client_select(
    board: &Board,
    epoch: u64,
    seed: &Seed,
    params: &EpochParams,
) -> Result<(ValidatedRoster, ActiveSet), ProtocolError> {
    let roster = client_collect(board, epoch, seed, params.backend);
    if roster.is_empty() {
        return Ok((roster, ActiveSet::degenerate(epoch, params.threshold)));
    }
    let active = selection::select_active_set(&roster, params.threshold)?;
    let active = selection::assign_layers(&active, &roster, params.layers)?;
    Ok((roster, active))
}

/// Drives one full post/setup/select cycle. The board must not be past
/// `(epoch, post)`; it is left at `(epoch, select)`.
pub fn run_epoch<A: Agent>(
    world: &[A],
    board: &mut Board,
    chain: &mut SeedChain,
    epoch: u64,
    params: &EpochParams,
) -> Result<EpochOutcome, ProtocolError> {
    let start = Clock::new(epoch, Phase::Post);
    let clock = board.clock();
    if clock.epoch > epoch
        || (clock.epoch == epoch
            && clock.phase != Phase::Post
            && clock.phase != Phase::GenesisCommit
            && clock.phase != Phase::GenesisReveal)
    {
        return Err(ProtocolError::ClockAhead {
            board: clock,
            epoch,
        });
    }
    board.advance_to(start);
    let mut timing = EpochTiming::default();

    let t = Instant::now();
    for agent in world {
        agent.post(board, epoch)?;
    }
    timing.post = t.elapsed();

    board.advance_phase();

    if chain.get(epoch).is_none() {
        let prev_roster = match epoch.checked_sub(1) {
            Some(prev) => {
                let prev_seed = chain.seed(prev).ok_or(ProtocolError::NoSeed(prev))?;
                Some(client_collect(board, prev, prev_seed, params.backend))
            }
            None => None,
        };
        if let Some(g) = prev_roster.as_ref().and_then(seedchain::elect_proposer) {
            let prev_seed = *chain.seed(epoch - 1).expect("checked above");
            if let Some(agent) = world.iter().find(|a| a.node_id() == g) {
                propose(agent.keypair(), &prev_seed, epoch, board, params)?;
            }
        }
        let record =
            seedchain::derive_seed(chain, board, epoch, prev_roster.as_ref(), params.backend)?;
        chain.push(record)?;
    }
    let seed_record = chain
        .get(epoch)
        .cloned()
        .ok_or(ProtocolError::NoSeed(epoch))?;

    let setup_start = Instant::now();
    for agent in world {
        let t = Instant::now();
        agent.setup(board, epoch, &seed_record.seed, params.backend)?;
        timing.setup_max_node = timing.setup_max_node.max(t.elapsed());
    }
    timing.setup_total = setup_start.elapsed();

    board.advance_phase();

    let mut active_sets = Vec::with_capacity(params.clients.max(1));
    let mut roster = None;
    for _ in 0..params.clients.max(1) {
        let t = Instant::now();
        let (r, active) = client_select(board, epoch, &seed_record.seed, params)?;
        timing.select_max_client = timing.select_max_client.max(t.elapsed());
        roster.get_or_insert(r);
        active_sets.push(active);
    }
    let roster = roster.expect("at least one client");
    Ok(EpochOutcome {
        epoch,
        degenerate: roster.is_empty(),
        seed: seed_record,
        roster,
        active_sets,
        timing,
    })
}

fn propose(
    key: &KeyPair,
    prev_seed: &Seed,
    epoch: u64,
    board: &mut Board,
    params: &EpochParams,
) -> Result<(), ProtocolError> {
    match params.proposer {
        ProposerMode::Honest => {
            seedchain::propose_seed(key, prev_seed, epoch, board, params.backend)?;
        }
        ProposerMode::Silent => {}
        ProposerMode::Corrupt => {
            let input = seedchain::proposal_input(prev_seed, epoch);
            let mut output = params.backend.prove(key, &input);
            output.proof[0] ^= 0x01;
            seedchain::post_proposal(key, &output, epoch, board)?;
        }
    }
    Ok(())
}
