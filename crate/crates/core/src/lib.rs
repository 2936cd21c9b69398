//! Verifiable, weighted selection of a mixnet active set from a public
//! bulletin board.

pub mod adversary;
pub mod board;
pub mod codec;
pub mod crypto;
pub mod protocol;
pub mod replay;
pub mod roster;
pub mod seedchain;
pub mod selection;
pub mod stats;

pub use board::{Board, BoardEntry, Clock, EntryKind, Phase};
pub use crypto::{Backend, KeyPair, NodeId, PublicKey};
pub use roster::{RejectionReason, RosterMember, ValidatedRoster};
pub use seedchain::{Provenance, Seed, SeedChain, SeedRecord};
pub use selection::{ActiveSet, SelectedNode, Threshold};
