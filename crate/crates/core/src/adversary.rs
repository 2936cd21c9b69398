//! Misbehaving node agents, multi-epoch scenarios, and the key-grinding
//! experiment.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::board::{Board, Clock, Phase};
use crate::crypto::{Backend, KeyPair, NodeId, Vrf};
use crate::protocol::{
    self, Agent, CommitmentRecord, EpochOutcome, EpochParams, ProposerMode, ProtocolError,
    RosterMember, ValidatedRoster,
};
use crate::seedchain::{self, Seed, SeedChain, SeedError};
use crate::selection::{self, Threshold};
use crate::stats::{self, TwoProportion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BehaviorProfile {
    Honest,
    /// Never registers, but still commits.
    SilentPost,
    /// Registers but never commits.
    SilentSetup,
    /// Commits with a corrupted VRF proof.
    BadProof,
    /// Commits with an inner signature that does not verify.
    BadSignature,
    /// Honest participant whose key is the best of `attempts` candidates.
    Grinder {
        attempts: u64,
    },
}

impl BehaviorProfile {
    /// Whether the profile can never pass client validation.
    pub fn is_faulty(self) -> bool {
        !matches!(
            self,
            BehaviorProfile::Honest | BehaviorProfile::Grinder { .. }
        )
    }
}

impl fmt::Display for BehaviorProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BehaviorProfile::Honest => f.write_str("honest"),
            BehaviorProfile::SilentPost => f.write_str("silent-post"),
            BehaviorProfile::SilentSetup => f.write_str("silent-setup"),
            BehaviorProfile::BadProof => f.write_str("bad-proof"),
            BehaviorProfile::BadSignature => f.write_str("bad-signature"),
            BehaviorProfile::Grinder { attempts } => write!(f, "grinder:{attempts}"),
        }
    }
}

impl FromStr for BehaviorProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match s.as_str() {
            "honest" => BehaviorProfile::Honest,
            "silent-post" => BehaviorProfile::SilentPost,
            "silent-setup" => BehaviorProfile::SilentSetup,
            "bad-proof" => BehaviorProfile::BadProof,
            "bad-signature" => BehaviorProfile::BadSignature,
            other => match other.strip_prefix("grinder:") {
                Some(k) => BehaviorProfile::Grinder {
                    attempts: k
                        .parse()
                        .map_err(|_| format!("bad grinder attempt count `{k}`"))?,
                },
                None => return Err(format!("unknown behavior `{other}`")),
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioNode {
    pub key: KeyPair,
    pub weight: u64,
    pub profile: BehaviorProfile,
}

impl Agent for ScenarioNode {
    fn keypair(&self) -> &KeyPair {
        &self.key
    }

    fn post(&self, board: &mut Board, epoch: u64) -> Result<(), ProtocolError> {
        if self.profile == BehaviorProfile::SilentPost {
            return Ok(());
        }
        protocol::node_post(&self.key, self.weight, board, epoch).map(drop)
    }

    fn setup(
        &self,
        board: &mut Board,
        epoch: u64,
        seed: &Seed,
        backend: Backend,
    ) -> Result<(), ProtocolError> {
        let key = &self.key;
        match self.profile {
            BehaviorProfile::SilentSetup => Ok(()),
            BehaviorProfile::Honest
            | BehaviorProfile::SilentPost
            | BehaviorProfile::Grinder { .. } => {
                protocol::node_setup(key, board, epoch, seed, backend).map(drop)
            }
            BehaviorProfile::BadProof => {
                let mut out = backend.prove(key, seed);
                let last = out.proof.len() - 1;
                out.proof[last] ^= 0x80;
                let record = CommitmentRecord::new(key, out);
                protocol::post_commitment(board, key, epoch, &record).map(drop)
            }
            BehaviorProfile::BadSignature => {
                let mut record = CommitmentRecord::new(key, backend.prove(key, seed));
                let mut sig = *record.signature.as_bytes();
                sig[0] ^= 0x01;
                record.signature = crate::crypto::Signature::from_slice(&sig).expect("64 bytes");
                protocol::post_commitment(board, key, epoch, &record).map(drop)
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario has no nodes")]
    NoNodes,
    #[error("node {0} has weight zero")]
    ZeroWeight(usize),
    #[error("layer count must be at least 1")]
    ZeroLayers,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Seed(#[from] SeedError),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub nodes: Vec<(u64, BehaviorProfile)>,
    /// Selection epochs to run after the bootstrap epoch 0.
    pub epochs: u64,
    pub threshold: Threshold,
    pub layers: u32,
    pub backend: Backend,
    pub clients: usize,
    pub proposer: ProposerMode,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn new(nodes: Vec<(u64, BehaviorProfile)>, epochs: u64) -> Self {
        Self {
            nodes,
            epochs,
            threshold: Threshold::new(1, 2).expect("valid"),
            layers: 1,
            backend: Backend::Mock,
            clients: 2,
            proposer: ProposerMode::Honest,
            rng_seed: 0,
        }
    }

    pub fn params(&self) -> EpochParams {
        EpochParams {
            threshold: self.threshold,
            layers: self.layers,
            clients: self.clients.max(2),
            backend: self.backend,
            proposer: self.proposer,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioTranscript {
    pub board: Board,
    pub chain: SeedChain,
    pub nodes: Vec<ScenarioNode>,
    /// Outcomes for epochs `1..=epochs`.
    pub epochs: Vec<EpochOutcome>,
}

impl ScenarioTranscript {
    pub fn clients_agree(&self) -> bool {
        self.epochs.iter().all(EpochOutcome::clients_agree)
    }

    pub fn degenerate_epochs(&self) -> Vec<u64> {
        self.epochs
            .iter()
            .filter(|o| o.degenerate)
            .map(|o| o.epoch)
            .collect()
    }

    pub fn profile_of(&self, id: &NodeId) -> Option<BehaviorProfile> {
        self.nodes
            .iter()
            .find(|n| n.key.node_id() == *id)
            .map(|n| n.profile)
    }

    /// Faulty nodes that made it into some client's ActiveSet.
    pub fn selected_faulty(&self) -> Vec<(u64, NodeId)> {
        let mut out = Vec::new();
        for o in &self.epochs {
            for set in &o.active_sets {
                for s in &set.selected {
                    if self
                        .profile_of(&s.node_id)
                        .is_some_and(BehaviorProfile::is_faulty)
                    {
                        out.push((o.epoch, s.node_id));
                    }
                }
            }
        }
        out
    }
}

/// Runs the genesis ceremony and `epochs` selection epochs. Every node
/// takes part in genesis; profiles only govern the epoch cycle.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioTranscript, ScenarioError> {
    if scenario.nodes.is_empty() {
        return Err(ScenarioError::NoNodes);
    }
    if let Some(i) = scenario.nodes.iter().position(|(w, _)| *w == 0) {
        return Err(ScenarioError::ZeroWeight(i));
    }
    if scenario.layers == 0 {
        return Err(ScenarioError::ZeroLayers);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.rng_seed);
    let mut keys: Vec<KeyPair> = scenario
        .nodes
        .iter()
        .map(|_| KeyPair::generate(&mut rng))
        .collect();

    let mut board = Board::with_genesis();
    let nonces: Vec<Seed> = keys.iter().map(|_| rng.gen()).collect();
    for (k, n) in keys.iter().zip(&nonces) {
        seedchain::genesis_commit(k, n, &mut board)?;
    }
    board.advance_phase();
    for (k, n) in keys.iter().zip(&nonces) {
        seedchain::genesis_reveal(k, n, &mut board)?;
    }
    let genesis = seedchain::genesis_seed(&board)?;

    // Grinders pick their key against the only seed known before they
    // register.
    let honest: Vec<(KeyPair, u64)> = keys
        .iter()
        .zip(&scenario.nodes)
        .filter(|(_, (_, p))| !p.is_faulty() && !matches!(p, BehaviorProfile::Grinder { .. }))
        .map(|(k, (w, _))| (k.clone(), *w))
        .collect();
    let target = protocol::honest_roster(&honest, &genesis.seed, scenario.backend);
    for (i, (w, p)) in scenario.nodes.iter().enumerate() {
        if let BehaviorProfile::Grinder { attempts } = *p {
            let g = grind_keys(
                &target,
                *w,
                &genesis.seed,
                attempts,
                scenario.backend,
                &mut rng,
            );
            if let Some(k) = g.key {
                keys[i] = k;
            }
        }
    }

    let world: Vec<ScenarioNode> = keys
        .into_iter()
        .zip(&scenario.nodes)
        .map(|(key, &(weight, profile))| ScenarioNode {
            key,
            weight,
            profile,
        })
        .collect();

    let mut chain = SeedChain::new();
    chain.push(genesis)?;
    board.advance_to(Clock::new(0, Phase::Post));
    let params = scenario.params();
    protocol::run_epoch(&world, &mut board, &mut chain, 0, &params)?;
    let mut epochs = Vec::with_capacity(scenario.epochs as usize);
    for e in 1..=scenario.epochs {
        epochs.push(protocol::run_epoch(
            &world, &mut board, &mut chain, e, &params,
        )?);
    }
    Ok(ScenarioTranscript {
        board,
        chain,
        nodes: world,
        epochs,
    })
}

#[derive(Debug, Clone)]
pub struct GrindOutcome {
    pub key: Option<KeyPair>,
    pub attempts_used: u64,
    /// Whether `key` wins round 1 against `seed`.
    pub selected: bool,
    /// `w_adv / W` with the adversary included.
    pub baseline: f64,
    /// `selected - baseline` for this single grind.
    pub advantage: f64,
}

/// Tries up to `attempts` fresh keys, keeping the first one that wins round 1
/// of `target` plus itself under `seed` (or the last one tried).
pub fn grind_keys<R: RngCore>(
    target: &ValidatedRoster,
    adversary_weight: u64,
    seed: &Seed,
    attempts: u64,
    backend: Backend,
    rng: &mut R,
) -> GrindOutcome {
    let total = target.total_weight() + adversary_weight;
    let baseline = if total == 0 {
        0.0
    } else {
        adversary_weight as f64 / total as f64
    };
    let mut best = None;
    let mut used = 0;
    let mut selected = false;
    for _ in 0..attempts {
        used += 1;
        let key = KeyPair::generate(rng);
        selected = wins_round_one(target, &key, adversary_weight, seed, backend);
        best = Some(key);
        if selected {
            break;
        }
    }
    GrindOutcome {
        key: best,
        attempts_used: used,
        selected,
        baseline,
        advantage: f64::from(u8::from(selected)) - baseline,
    }
}

fn wins_round_one(
    target: &ValidatedRoster,
    key: &KeyPair,
    weight: u64,
    seed: &Seed,
    backend: Backend,
) -> bool {
    if weight == 0 {
        return false;
    }
    let mut members = target.members().to_vec();
    members.push(RosterMember::new(
        key.node_id(),
        weight,
        backend.prove(key, seed).commitment,
    ));
    let roster = ValidatedRoster::from_members(target.epoch, *seed, members);
    selection::first_draw(&roster).is_ok_and(|id| id == key.node_id())
}

#[derive(Debug, Clone)]
pub struct GrindingConfig {
    pub honest_weights: Vec<u64>,
    pub adversary_weight: u64,
    pub attempts: u64,
    /// Trials per honest-order arm.
    pub trials: u64,
    /// Trials for the seed-known arm.
    pub seed_known_trials: u64,
    pub alpha: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone)]
pub struct GrindingReport {
    pub baseline: f64,
    /// One key, seed drawn after registration.
    pub control: ArmResult,
    /// Best of `attempts` keys against a guessed seed; real seed drawn after.
    pub honest_order: ArmResult,
    /// Best of `attempts` keys against the real seed.
    pub seed_known: ArmResult,
    /// Honest-order arm against the control arm.
    pub honest_vs_control: TwoProportion,
    /// Seed-known arm against the control arm.
    pub known_vs_control: TwoProportion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmResult {
    pub trials: u64,
    pub hits: u64,
}

impl ArmResult {
    pub fn frequency(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }
}

#[derive(Clone, Copy)]
enum Arm {
    Control,
    HonestOrder,
    SeedKnown,
}

fn trial_rng(rng_seed: u64, arm: Arm, trial: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    rng.set_stream(((arm as u64) << 56) ^ trial);
    rng
}

fn run_trial(cfg: &GrindingConfig, arm: Arm, trial: u64) -> bool {
    let backend = Backend::Mock;
    let mut rng = trial_rng(cfg.rng_seed, arm, trial);
    let honest: Vec<(KeyPair, u64)> = cfg
        .honest_weights
        .iter()
        .map(|w| (KeyPair::generate(&mut rng), *w))
        .collect();
    let seed: Seed = rng.gen();
    let target = protocol::honest_roster(&honest, &seed, backend);
    let w = cfg.adversary_weight;
    match arm {
        Arm::Control => {
            let key = KeyPair::generate(&mut rng);
            wins_round_one(&target, &key, w, &seed, backend)
        }
        Arm::HonestOrder => {
            let guess: Seed = rng.gen();
            let guess_target = protocol::honest_roster(&honest, &guess, backend);
            match grind_keys(&guess_target, w, &guess, cfg.attempts, backend, &mut rng).key {
                Some(key) => wins_round_one(&target, &key, w, &seed, backend),
                None => false,
            }
        }
        Arm::SeedKnown => grind_keys(&target, w, &seed, cfg.attempts, backend, &mut rng).selected,
    }
}

fn run_arm(cfg: &GrindingConfig, arm: Arm, trials: u64) -> ArmResult {
    let hits = (0..trials)
        .into_par_iter()
        .filter(|&t| run_trial(cfg, arm, t))
        .count() as u64;
    ArmResult { trials, hits }
}

/// Measures round-1 selection frequency of an adversary under three key
/// strategies. Uses the mock backend; trials run in parallel and are
/// individually seeded, so results do not depend on scheduling.
pub fn grinding_experiment(cfg: &GrindingConfig) -> GrindingReport {
    let total: u64 = cfg.honest_weights.iter().sum::<u64>() + cfg.adversary_weight;
    let control = run_arm(cfg, Arm::Control, cfg.trials);
    let honest_order = run_arm(cfg, Arm::HonestOrder, cfg.trials);
    let seed_known = run_arm(cfg, Arm::SeedKnown, cfg.seed_known_trials);
    GrindingReport {
        baseline: cfg.adversary_weight as f64 / total as f64,
        honest_vs_control: stats::two_proportion_test(
            honest_order.hits,
            honest_order.trials,
            control.hits,
            control.trials,
            cfg.alpha,
        ),
        known_vs_control: stats::two_proportion_test(
            seed_known.hits,
            seed_known.trials,
            control.hits,
            control.trials,
            cfg.alpha,
        ),
        control,
        honest_order,
        seed_known,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::RejectionReason;
    use std::collections::BTreeSet;

    fn honest(n: usize) -> Vec<(u64, BehaviorProfile)> {
        (0..n)
            .map(|i| (1 + i as u64, BehaviorProfile::Honest))
            .collect()
    }

    #[test]
    fn profile_names_round_trip() {
        for p in [
            BehaviorProfile::Honest,
            BehaviorProfile::SilentPost,
            BehaviorProfile::SilentSetup,
            BehaviorProfile::BadProof,
            BehaviorProfile::BadSignature,
            BehaviorProfile::Grinder { attempts: 7 },
        ] {
            assert_eq!(p.to_string().parse::<BehaviorProfile>().unwrap(), p);
        }
        assert_eq!(
            "BAD_PROOF".parse::<BehaviorProfile>().unwrap(),
            BehaviorProfile::BadProof
        );
        assert!("loud".parse::<BehaviorProfile>().is_err());
    }

    #[test]
    fn all_honest_epochs_succeed() {
        let t = run_scenario(&Scenario::new(honest(10), 5)).unwrap();
        assert_eq!(t.epochs.len(), 5);
        assert!(t.clients_agree());
        assert!(t.degenerate_epochs().is_empty());
        for o in &t.epochs {
            assert_eq!(o.roster.len(), 10);
            assert!(!o.active_set().selected.is_empty());
        }
    }

    fn with_faulty(profile: BehaviorProfile) -> ScenarioTranscript {
        let mut nodes = honest(8);
        nodes.push((20, profile));
        nodes.push((30, profile));
        let mut s = Scenario::new(nodes, 4);
        s.rng_seed = 42;
        run_scenario(&s).unwrap()
    }

    fn members(o: &EpochOutcome) -> BTreeSet<NodeId> {
        o.roster.members().iter().map(|m| m.node_id).collect()
    }

    #[test]
    fn silent_setup_nodes_are_never_selected() {
        let t = with_faulty(BehaviorProfile::SilentSetup);
        assert!(t.clients_agree());
        assert!(t.selected_faulty().is_empty());
        for o in &t.epochs {
            assert_eq!(o.roster.len(), 8);
        }
    }

    #[test]
    fn bad_proof_matches_silent_setup() {
        let silent = with_faulty(BehaviorProfile::SilentSetup);
        let bad = with_faulty(BehaviorProfile::BadProof);
        assert!(bad.selected_faulty().is_empty());
        for (a, b) in silent.epochs.iter().zip(&bad.epochs) {
            assert_eq!(members(a), members(b));
        }
        let faulty = bad.nodes[9].key.node_id();
        assert_eq!(
            bad.epochs[0].roster.rejection(&faulty),
            Some(RejectionReason::InvalidVrf)
        );
        assert_eq!(
            silent.epochs[0].roster.rejection(&faulty),
            Some(RejectionReason::MissingCommitment)
        );
    }

    #[test]
    fn bad_signature_and_silent_post_rejected() {
        let t = with_faulty(BehaviorProfile::BadSignature);
        let id = t.nodes[8].key.node_id();
        assert_eq!(
            t.epochs[1].roster.rejection(&id),
            Some(RejectionReason::BadCommitSignature)
        );
        let t = with_faulty(BehaviorProfile::SilentPost);
        assert_eq!(
            t.epochs[1].roster.rejection(&id),
            Some(RejectionReason::MissingPost)
        );
        assert!(t.selected_faulty().is_empty());
    }

    #[test]
    fn all_faulty_is_degenerate_not_an_error() {
        let nodes = vec![
            (3, BehaviorProfile::SilentSetup),
            (4, BehaviorProfile::BadProof),
        ];
        let t = run_scenario(&Scenario::new(nodes, 3)).unwrap();
        assert_eq!(t.degenerate_epochs(), vec![1, 2, 3]);
        assert!(t.clients_agree());
    }

    #[test]
    fn scenarios_are_reproducible() {
        let mut s = Scenario::new(honest(5), 3);
        s.rng_seed = 9;
        let a = run_scenario(&s).unwrap().board.to_transcript();
        let b = run_scenario(&s).unwrap().board.to_transcript();
        assert_eq!(a, b);
        s.rng_seed = 10;
        assert_ne!(a, run_scenario(&s).unwrap().board.to_transcript());
    }

    #[test]
    fn grinder_participates_honestly() {
        let mut nodes = honest(4);
        nodes.push((2, BehaviorProfile::Grinder { attempts: 20 }));
        let t = run_scenario(&Scenario::new(nodes, 2)).unwrap();
        assert_eq!(t.epochs[0].roster.len(), 5);
    }

    #[test]
    fn zero_attempts_yield_nothing() {
        let target = protocol::honest_roster(
            &[(KeyPair::generate(&mut rand::thread_rng()), 5)],
            &[1; 32],
            Backend::Mock,
        );
        let g = grind_keys(
            &target,
            5,
            &[1; 32],
            0,
            Backend::Mock,
            &mut rand::thread_rng(),
        );
        assert!(g.key.is_none());
        assert!(!g.selected);
        assert_eq!(g.attempts_used, 0);
    }

    #[test]
    fn seed_known_grinding_beats_baseline() {
        let cfg = GrindingConfig {
            honest_weights: vec![10, 10, 10, 10],
            adversary_weight: 2,
            attempts: 100,
            trials: 1000,
            seed_known_trials: 200,
            alpha: 0.01,
            rng_seed: 5,
        };
        let r = grinding_experiment(&cfg);
        assert!(r.seed_known.frequency() > 0.4, "{:?}", r.seed_known);
        assert!(r.known_vs_control.significant);
    }
}
