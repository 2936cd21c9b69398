//! The validated candidate set a client derives for one epoch.

use crate::crypto::{hash_to_int, HashInt, NodeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RosterMember {
    pub node_id: NodeId,
    pub weight: u64,
    pub commitment: Vec<u8>,
    pub hash_int: HashInt,
}

impl RosterMember {
    pub fn new(node_id: NodeId, weight: u64, commitment: Vec<u8>) -> Self {
        let hash_int = hash_to_int(&commitment);
        Self {
            node_id,
            weight,
            commitment,
            hash_int,
        }
    }

    fn sort_key(&self) -> (HashInt, NodeId) {
        (self.hash_int, self.node_id)
    }
}

/// Why a node that appeared on the board was left out of the roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectionReason {
    /// Committed without any registration from an earlier epoch.
    MissingPost,
    /// Latest registration is not signed by the node's key.
    BadPostSignature,
    /// Latest registration carries weight zero.
    ZeroWeight,
    /// Registered, but no commitment this epoch.
    MissingCommitment,
    BadCommitSignature,
    /// VRF proof does not verify against the epoch seed.
    InvalidVrf,
    /// Payload does not decode.
    Malformed,
}

impl RejectionReason {
    pub fn name(self) -> &'static str {
        match self {
            RejectionReason::MissingPost => "missing-post",
            RejectionReason::BadPostSignature => "bad-post-signature",
            RejectionReason::ZeroWeight => "zero-weight",
            RejectionReason::MissingCommitment => "missing-commitment",
            RejectionReason::BadCommitSignature => "bad-commit-signature",
            RejectionReason::InvalidVrf => "invalid-vrf",
            RejectionReason::Malformed => "malformed",
        }
    }
}

impl std::fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedRoster {
    pub epoch: u64,
    pub seed: [u8; 32],
    /// Ascending `(hash_int, node_id)`.
    members: Vec<RosterMember>,
    /// Ascending node id.
    rejected: Vec<(NodeId, RejectionReason)>,
}

impl ValidatedRoster {
    pub fn new(
        epoch: u64,
        seed: [u8; 32],
        mut members: Vec<RosterMember>,
        mut rejected: Vec<(NodeId, RejectionReason)>,
    ) -> Self {
        members.sort_by_key(RosterMember::sort_key);
        rejected.sort();
        Self {
            epoch,
            seed,
            members,
            rejected,
        }
    }

    pub fn from_members(epoch: u64, seed: [u8; 32], members: Vec<RosterMember>) -> Self {
        Self::new(epoch, seed, members, Vec::new())
    }

    pub fn members(&self) -> &[RosterMember] {
        &self.members
    }

    pub fn rejected(&self) -> &[(NodeId, RejectionReason)] {
        &self.rejected
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn member(&self, id: &NodeId) -> Option<&RosterMember> {
        self.members.iter().find(|m| m.node_id == *id)
    }

    pub fn rejection(&self, id: &NodeId) -> Option<RejectionReason> {
        self.rejected
            .iter()
            .find(|(node, _)| node == id)
            .map(|(_, reason)| *reason)
    }

    pub fn total_weight(&self) -> u64 {
        self.members.iter().map(|m| m.weight).sum()
    }
}
