//! Append-only, per-epoch bulletin board with a versioned text transcript.
//!
//! Every entry is signed by its author over `(epoch, kind, payload)` in the
//! canonical encoding. The board assigns strictly increasing sequence numbers
//! and never mutates an entry once stored.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::codec::Encoder;
use crate::crypto::{self, KeyPair, NodeId, PublicKey, Signature};

pub const TRANSCRIPT_VERSION: &str = "verasel-board v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntryKind {
    Post,
    Commit,
    SeedProposal,
    GenesisCommit,
    GenesisReveal,
}

impl EntryKind {
    pub const ALL: [EntryKind; 5] = [
        EntryKind::Post,
        EntryKind::Commit,
        EntryKind::SeedProposal,
        EntryKind::GenesisCommit,
        EntryKind::GenesisReveal,
    ];

    fn code(self) -> u64 {
        match self {
            EntryKind::Post => 0,
            EntryKind::Commit => 1,
            EntryKind::SeedProposal => 2,
            EntryKind::GenesisCommit => 3,
            EntryKind::GenesisReveal => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EntryKind::Post => "POST",
            EntryKind::Commit => "COMMIT",
            EntryKind::SeedProposal => "SEED_PROPOSAL",
            EntryKind::GenesisCommit => "GENESIS_COMMIT",
            EntryKind::GenesisReveal => "GENESIS_REVEAL",
        }
    }

    /// The only phase in which this kind may be posted.
    pub fn admissible_in(self) -> Phase {
        match self {
            EntryKind::Post => Phase::Post,
            EntryKind::Commit | EntryKind::SeedProposal => Phase::Setup,
            EntryKind::GenesisCommit => Phase::GenesisCommit,
            EntryKind::GenesisReveal => Phase::GenesisReveal,
        }
    }
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntryKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown entry kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    GenesisCommit,
    GenesisReveal,
    Post,
    Setup,
    Select,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::GenesisCommit,
        Phase::GenesisReveal,
        Phase::Post,
        Phase::Setup,
        Phase::Select,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::GenesisCommit => "genesis-commit",
            Phase::GenesisReveal => "genesis-reveal",
            Phase::Post => "post",
            Phase::Setup => "setup",
            Phase::Select => "select",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown phase `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Clock {
    pub epoch: u64,
    pub phase: Phase,
}

impl Clock {
    pub const fn new(epoch: u64, phase: Phase) -> Self {
        Self { epoch, phase }
    }

    /// post -> setup -> select -> next epoch's post. Genesis windows lead
    /// into the post phase of the same epoch.
    pub fn next(self) -> Clock {
        let (epoch, phase) = match self.phase {
            Phase::GenesisCommit => (self.epoch, Phase::GenesisReveal),
            Phase::GenesisReveal => (self.epoch, Phase::Post),
            Phase::Post => (self.epoch, Phase::Setup),
            Phase::Setup => (self.epoch, Phase::Select),
            Phase::Select => (self.epoch + 1, Phase::Post),
        };
        Clock { epoch, phase }
    }
}

impl fmt::Display for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(e={}, {})", self.epoch, self.phase)
    }
}

/// Bytes covered by an entry's signature.
pub fn signing_bytes(epoch: u64, kind: EntryKind, payload: &[u8]) -> Vec<u8> {
    Encoder::new()
        .u64(epoch)
        .u64(kind.code())
        .bytes(payload)
        .finish()
}

/// An entry as submitted, before the board assigns a sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub epoch: u64,
    pub kind: EntryKind,
    pub author: NodeId,
    pub payload: Vec<u8>,
    pub signature: Signature,
}

impl Submission {
    pub fn signed(key: &KeyPair, epoch: u64, kind: EntryKind, payload: Vec<u8>) -> Self {
        let signature = key.sign(&signing_bytes(epoch, kind, &payload));
        Self {
            epoch,
            kind,
            author: key.node_id(),
            payload,
            signature,
        }
    }

    pub fn verify(&self) -> bool {
        crypto::verify_sig(
            &self.author,
            &signing_bytes(self.epoch, self.kind, &self.payload),
            &self.signature,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoardEntry {
    pub sequence: u64,
    pub epoch: u64,
    pub kind: EntryKind,
    pub author: NodeId,
    pub payload: Vec<u8>,
    pub signature: Signature,
}

impl BoardEntry {
    pub fn verify(&self) -> bool {
        crypto::verify_sig(
            &self.author,
            &signing_bytes(self.epoch, self.kind, &self.payload),
            &self.signature,
        )
    }

    fn to_line(&self) -> String {
        let payload = if self.payload.is_empty() {
            "-".to_string()
        } else {
            hex::encode(&self.payload)
        };
        format!(
            "entry {} {} {} {} {} {}",
            self.sequence,
            self.epoch,
            self.kind,
            self.author,
            payload,
            hex::encode(self.signature.as_bytes())
        )
    }

    fn parse_line(line: &str) -> Result<BoardEntry, String> {
        let fields: Vec<&str> = line.split(' ').collect();
        let [tag, seq, epoch, kind, author, payload, sig] = fields[..] else {
            return Err(format!("expected 7 fields, found {}", fields.len()));
        };
        if tag != "entry" {
            return Err(format!("expected `entry`, found `{tag}`"));
        }
        let int = |s: &str| {
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                return Err(format!("bad integer `{s}`"));
            }
            s.parse::<u64>().map_err(|e| e.to_string())
        };
        let hex_field = |s: &str| {
            if s.bytes().any(|b| b.is_ascii_uppercase()) {
                return Err(format!("hex must be lowercase: `{s}`"));
            }
            hex::decode(s).map_err(|e| e.to_string())
        };
        let payload = if payload == "-" {
            Vec::new()
        } else {
            let raw = hex_field(payload)?;
            if raw.is_empty() {
                return Err("empty payload must be written as `-`".into());
            }
            raw
        };
        Ok(BoardEntry {
            sequence: int(seq)?,
            epoch: int(epoch)?,
            kind: kind.parse()?,
            author: PublicKey::from_slice(&hex_field(author)?).map_err(|e| e.to_string())?,
            payload,
            signature: Signature::from_slice(&hex_field(sig)?).map_err(|e| e.to_string())?,
        })
    }
}

#[derive(Debug, Error)]
pub enum BoardError {
    #[error("signature does not verify for author {0}")]
    BadSignature(NodeId),
    #[error("duplicate {kind} from {author} in epoch {epoch}")]
    DuplicateEntry {
        epoch: u64,
        kind: EntryKind,
        author: NodeId,
    },
    #[error("{kind} is not admissible during {clock}")]
    PhaseViolation { kind: EntryKind, clock: Clock },
    #[error("entry for epoch {entry_epoch} submitted during {clock}")]
    WrongEpoch { entry_epoch: u64, clock: Clock },
    #[error("transcript I/O: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported transcript format: {0}")]
    Version(String),
    #[error("transcript line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("transcript corrupted: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Board {
    entries: Vec<BoardEntry>,
    clock: Clock,
    keys: HashSet<(u64, EntryKind, NodeId)>,
}

impl Default for Board {
    fn default() -> Self {
        Self::new()
    }
}

impl Board {
    /// Empty board at `(e=0, post)`.
    pub fn new() -> Self {
        Self::starting_at(Clock::new(0, Phase::Post))
    }

    /// Empty board at epoch 0's genesis commit window.
    pub fn with_genesis() -> Self {
        Self::starting_at(Clock::new(0, Phase::GenesisCommit))
    }

    pub fn starting_at(clock: Clock) -> Self {
        Self {
            entries: Vec::new(),
            clock,
            keys: HashSet::new(),
        }
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn entries(&self) -> &[BoardEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn next_sequence(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.sequence + 1)
    }

    /// Appends a signed entry. On error the board is unchanged.
    pub fn post_entry(&mut self, sub: Submission) -> Result<u64, BoardError> {
        if !sub.verify() {
            return Err(BoardError::BadSignature(sub.author));
        }
        if sub.kind.admissible_in() != self.clock.phase {
            return Err(BoardError::PhaseViolation {
                kind: sub.kind,
                clock: self.clock,
            });
        }
        if sub.epoch != self.clock.epoch {
            return Err(BoardError::WrongEpoch {
                entry_epoch: sub.epoch,
                clock: self.clock,
            });
        }
        let key = (sub.epoch, sub.kind, sub.author);
        if self.keys.contains(&key) {
            return Err(BoardError::DuplicateEntry {
                epoch: sub.epoch,
                kind: sub.kind,
                author: sub.author,
            });
        }
        let sequence = self.next_sequence();
        self.keys.insert(key);
        self.entries.push(BoardEntry {
            sequence,
            epoch: sub.epoch,
            kind: sub.kind,
            author: sub.author,
            payload: sub.payload,
            signature: sub.signature,
        });
        Ok(sequence)
    }

    /// Entries of `kind` posted in `epoch`, in sequence order.
    pub fn read_epoch(&self, epoch: u64, kind: EntryKind) -> Vec<&BoardEntry> {
        self.entries
            .iter()
            .filter(|e| e.epoch == epoch && e.kind == kind)
            .collect()
    }

    pub fn advance_phase(&mut self) -> Clock {
        self.clock = self.clock.next();
        self.clock
    }

    /// Moves the clock forward until it reads `target`.
    pub fn advance_to(&mut self, target: Clock) -> Clock {
        let mut guard = 0u32;
        while self.clock != target {
            self.advance_phase();
            guard += 1;
            assert!(
                guard < 1_000_000,
                "clock {} cannot reach {target}",
                self.clock
            );
        }
        self.clock
    }

    pub fn to_transcript(&self) -> String {
        let mut body = format!(
            "{TRANSCRIPT_VERSION}\nclock {} {}\n",
            self.clock.epoch, self.clock.phase
        );
        for entry in &self.entries {
            body.push_str(&entry.to_line());
            body.push('\n');
        }
        let digest = hex::encode(crypto::digest(body.as_bytes()));
        body.push_str(&format!("digest {digest}\n"));
        body
    }

    /// Strict parse: any integrity problem is an error.
    pub fn from_transcript(text: &str) -> Result<Board, BoardError> {
        let audit = audit_transcript(text)?;
        match audit.issues.into_iter().next() {
            None => Ok(audit.board),
            Some(issue) => Err(BoardError::Corrupt(issue.to_string())),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BoardError> {
        fs::write(path, self.to_transcript())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Board, BoardError> {
        Board::from_transcript(&fs::read_to_string(path)?)
    }
}

/// A problem found while auditing a transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TranscriptIssue {
    DigestMismatch,
    MissingDigest,
    /// A line that does not parse; it is skipped.
    Unparseable {
        line: usize,
        reason: String,
    },
    /// An entry whose signature fails; it is excluded from the board.
    BadSignature {
        line: usize,
        author: NodeId,
    },
    /// An entry whose sequence number breaks the strictly increasing order.
    Sequence {
        line: usize,
        sequence: u64,
    },
    Duplicate {
        line: usize,
        author: NodeId,
    },
}

impl fmt::Display for TranscriptIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TranscriptIssue::DigestMismatch => f.write_str("transcript digest does not match"),
            TranscriptIssue::MissingDigest => f.write_str("transcript digest line missing"),
            TranscriptIssue::Unparseable { line, reason } => {
                write!(f, "line {line} unparseable: {reason}")
            }
            TranscriptIssue::BadSignature { line, author } => {
                write!(f, "line {line}: signature by node {author} does not verify")
            }
            TranscriptIssue::Sequence { line, sequence } => {
                write!(f, "line {line}: sequence {sequence} out of order")
            }
            TranscriptIssue::Duplicate { line, author } => {
                write!(f, "line {line}: duplicate entry by node {author}")
            }
        }
    }
}

#[derive(Debug)]
pub struct TranscriptAudit {
    /// Board rebuilt from every entry that survived the audit.
    pub board: Board,
    pub issues: Vec<TranscriptIssue>,
}

/// Lenient parse used by verifiers: integrity problems are collected rather
/// than aborting, so the offending entries can be named. Only a missing or
/// unknown header is fatal.
pub fn audit_transcript(text: &str) -> Result<TranscriptAudit, BoardError> {
    let mut issues = Vec::new();
    let mut lines = text.split_inclusive('\n').enumerate().peekable();

    let (_, header) = lines
        .next()
        .ok_or_else(|| BoardError::Version("empty transcript".into()))?;
    if header.trim_end_matches('\n') != TRANSCRIPT_VERSION {
        return Err(BoardError::Version(header.trim_end().to_string()));
    }
    let mut body_len = header.len();

    let clock = match lines.next() {
        Some((idx, line)) => {
            body_len += line.len();
            parse_clock(line.trim_end_matches('\n')).map_err(|reason| BoardError::Format {
                line: idx + 1,
                reason,
            })?
        }
        None => return Err(BoardError::Version("missing clock line".into())),
    };

    let mut board = Board::starting_at(clock);
    let mut digest_seen = false;
    let mut prev_seq: Option<u64> = None;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\n');
        if let Some(hex_digest) = line.strip_prefix("digest ") {
            let expected = hex::encode(crypto::digest(&text.as_bytes()[..body_len]));
            if digest_seen || hex_digest != expected || !raw.ends_with('\n') {
                issues.push(TranscriptIssue::DigestMismatch);
            }
            digest_seen = true;
            continue;
        }
        if digest_seen {
            issues.push(TranscriptIssue::Unparseable {
                line: line_no,
                reason: "content after digest".into(),
            });
            continue;
        }
        body_len += raw.len();
        let entry = match BoardEntry::parse_line(line) {
            Ok(entry) => entry,
            Err(reason) => {
                issues.push(TranscriptIssue::Unparseable {
                    line: line_no,
                    reason,
                });
                continue;
            }
        };
        // Order is checked against the previous parsed line, so one
        // dropped entry does not flag everything after it.
        let expected_seq = prev_seq.map_or(0, |p| p + 1);
        prev_seq = Some(entry.sequence);
        if !entry.verify() {
            issues.push(TranscriptIssue::BadSignature {
                line: line_no,
                author: entry.author,
            });
            continue;
        }
        if entry.sequence != expected_seq {
            issues.push(TranscriptIssue::Sequence {
                line: line_no,
                sequence: entry.sequence,
            });
            if board
                .entries
                .last()
                .is_some_and(|last| entry.sequence <= last.sequence)
            {
                continue;
            }
        }
        let key = (entry.epoch, entry.kind, entry.author);
        if !board.keys.insert(key) {
            issues.push(TranscriptIssue::Duplicate {
                line: line_no,
                author: entry.author,
            });
            continue;
        }
        board.entries.push(entry);
    }
    if !digest_seen {
        issues.push(TranscriptIssue::MissingDigest);
    }
    Ok(TranscriptAudit { board, issues })
}

fn parse_clock(line: &str) -> Result<Clock, String> {
    let fields: Vec<&str> = line.split(' ').collect();
    let ["clock", epoch, phase] = fields[..] else {
        return Err(format!("expected `clock <epoch> <phase>`, found `{line}`"));
    };
    if epoch.is_empty() || !epoch.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("bad epoch `{epoch}`"));
    }
    Ok(Clock::new(
        epoch
            .parse()
            .map_err(|e: std::num::ParseIntError| e.to_string())?,
        phase.parse()?,
    ))
}
