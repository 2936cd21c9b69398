//! Weight-table construction and the threshold-driven selection loop.
//!
//! Members occupy half-open intervals of `[0, W)` in roster order. Round `t`
//! draws `idx = draw_stream(roster, t) mod W_current`, moves the owner of
//! `idx` into the active set and compacts the table, until the selected
//! weight reaches `tau * W_total`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::codec::encode_u64;
use crate::crypto::{digest_parts, HashInt, NodeId};
use crate::roster::ValidatedRoster;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectionError {
    #[error("degenerate epoch: no valid candidates")]
    EmptyRoster,
    #[error("threshold must lie in (0, 1], got {0}")]
    Threshold(String),
    #[error("layer count must be at least 1")]
    ZeroLayers,
    #[error("index {idx} outside weight table of size {total}")]
    OutOfRange { idx: u64, total: u64 },
    #[error("node {0} not in weight table")]
    UnknownNode(NodeId),
    #[error("node {0} has zero weight")]
    ZeroWeight(NodeId),
    #[error("round numbers start at 1")]
    ZeroRound,
    #[error("selected node {0} has no commitment in the roster")]
    NotInRoster(NodeId),
}

/// Selection threshold `tau = numerator / denominator`, compared exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Threshold {
    numerator: u64,
    denominator: u64,
}

impl Threshold {
    pub fn new(numerator: u64, denominator: u64) -> Result<Self, SelectionError> {
        if numerator == 0 || denominator == 0 || numerator > denominator {
            return Err(SelectionError::Threshold(format!(
                "{numerator}/{denominator}"
            )));
        }
        Ok(Self {
            numerator,
            denominator,
        })
    }

    pub const FULL: Threshold = Threshold {
        numerator: 1,
        denominator: 1,
    };

    pub fn numerator(&self) -> u64 {
        self.numerator
    }

    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    /// `selected >= tau * total` in exact integer arithmetic.
    pub fn is_met(&self, selected: u64, total: u64) -> bool {
        u128::from(selected) * u128::from(self.denominator)
            >= u128::from(self.numerator) * u128::from(total)
    }

    pub fn as_f64(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

/// Accepts `n/d` or a decimal such as `0.5`.
impl FromStr for Threshold {
    type Err = SelectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || SelectionError::Threshold(s.to_string());
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return Threshold::new(n, d).map_err(|_| bad());
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18
            || !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
            || (int.is_empty() && frac.is_empty())
        {
            return Err(bad());
        }
        let denominator = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let numerator = int
            .checked_mul(denominator)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(bad)?;
        let g = gcd(numerator, denominator);
        Threshold::new(numerator / g.max(1), denominator / g.max(1)).map_err(|_| bad())
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Ordered intervals over `[0, W)`, one per node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WeightTable {
    segments: Vec<(NodeId, u64)>,
    total: u64,
}

impl WeightTable {
    pub fn from_segments(segments: Vec<(NodeId, u64)>) -> Result<Self, SelectionError> {
        if let Some((id, _)) = segments.iter().find(|(_, w)| *w == 0) {
            return Err(SelectionError::ZeroWeight(*id));
        }
        let total = segments.iter().map(|(_, w)| w).sum();
        Ok(Self { segments, total })
    }

    /// Segments in roster order.
    pub fn build(roster: &ValidatedRoster) -> Result<Self, SelectionError> {
        Self::from_segments(
            roster
                .members()
                .iter()
                .map(|m| (m.node_id, m.weight))
                .collect(),
        )
    }

    pub fn total_weight(&self) -> u64 {
        self.total
    }

    pub fn segments(&self) -> &[(NodeId, u64)] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Owner of the half-open interval containing `idx`.
    pub fn lookup(&self, idx: u64) -> Result<NodeId, SelectionError> {
        let mut begin = 0u64;
        for (id, w) in &self.segments {
            if idx < begin + w {
                return Ok(*id);
            }
            begin += w;
        }
        Err(SelectionError::OutOfRange {
            idx,
            total: self.total,
        })
    }

    /// Drops `id`'s interval; later intervals shift down.
    pub fn remove(&self, id: &NodeId) -> Result<WeightTable, SelectionError> {
        let pos = self
            .segments
            .iter()
            .position(|(node, _)| node == id)
            .ok_or(SelectionError::UnknownNode(*id))?;
        let mut segments = self.segments.clone();
        let (_, w) = segments.remove(pos);
        Ok(Self {
            segments,
            total: self.total - w,
        })
    }
}

/// Pre-modulus draw for round `t`: the `(t-1) mod m`-th sorted commitment,
/// suffixed with the pass counter once every commitment has been used.
pub fn draw_stream(roster: &ValidatedRoster, round: u64) -> Result<HashInt, SelectionError> {
    let members = roster.members();
    if members.is_empty() {
        return Err(SelectionError::EmptyRoster);
    }
    if round == 0 {
        return Err(SelectionError::ZeroRound);
    }
    let m = members.len() as u64;
    let counter = (round - 1) / m;
    let member = &members[((round - 1) % m) as usize];
    Ok(if counter == 0 {
        member.hash_int
    } else {
        HashInt::from_be_bytes(digest_parts(&[&member.commitment, &encode_u64(counter)]))
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedNode {
    pub node_id: NodeId,
    pub weight: u64,
    /// 1-based round in which the node was drawn.
    pub round: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    pub epoch: u64,
    pub selected: Vec<SelectedNode>,
    pub cumulative_weight: u64,
    pub total_weight: u64,
    pub threshold: Threshold,
    /// Populated by [`assign_layers`].
    pub layer_of: BTreeMap<NodeId, u32>,
}

impl ActiveSet {
    /// Result for an epoch with no valid candidates.
    pub fn degenerate(epoch: u64, threshold: Threshold) -> Self {
        Self {
            epoch,
            selected: Vec::new(),
            cumulative_weight: 0,
            total_weight: 0,
            threshold,
            layer_of: BTreeMap::new(),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.total_weight == 0
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.selected.iter().any(|s| s.node_id == *id)
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.selected.iter().map(|s| s.node_id).collect()
    }
}

/// Fenwick tree over roster positions. Zeroing a position is equivalent to
/// compacting the weight table: zero-width intervals own no index.
struct DrawTable {
    tree: Vec<u64>,
    weights: Vec<u64>,
    top_bit: usize,
}

impl DrawTable {
    fn new(weights: Vec<u64>) -> Self {
        let n = weights.len();
        let mut tree = vec![0u64; n + 1];
        tree[1..].copy_from_slice(&weights);
        for i in 1..=n {
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i];
            }
        }
        let top_bit = if n == 0 {
            0
        } else {
            1 << (usize::BITS - 1 - n.leading_zeros())
        };
        Self {
            tree,
            weights,
            top_bit,
        }
    }

    /// Position whose interval contains `idx` (requires `idx < remaining`).
    fn find(&self, idx: u64) -> usize {
        let n = self.weights.len();
        let mut pos = 0usize;
        let mut rest = idx;
        let mut step = self.top_bit;
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rest {
                pos = next;
                rest -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }

    fn remove(&mut self, pos: usize) {
        let w = std::mem::take(&mut self.weights[pos]);
        let mut j = pos + 1;
        while j < self.tree.len() {
            self.tree[j] -= w;
            j += j & j.wrapping_neg();
        }
    }
}

/// The node drawn in round 1, without running the rest of the loop.
pub fn first_draw(roster: &ValidatedRoster) -> Result<NodeId, SelectionError> {
    let total = roster.total_weight();
    if total == 0 {
        return Err(SelectionError::EmptyRoster);
    }
    let mut idx = draw_stream(roster, 1)?.rem_u64(total);
    for m in roster.members() {
        if idx < m.weight {
            return Ok(m.node_id);
        }
        idx -= m.weight;
    }
    unreachable!("index below total weight")
}

/// Runs the selection loop. A pure function of `(roster, threshold)`.
pub fn select_active_set(
    roster: &ValidatedRoster,
    threshold: Threshold,
) -> Result<ActiveSet, SelectionError> {
    let members = roster.members();
    if members.is_empty() {
        return Err(SelectionError::EmptyRoster);
    }
    if let Some(m) = members.iter().find(|m| m.weight == 0) {
        return Err(SelectionError::ZeroWeight(m.node_id));
    }
    let total: u64 = roster.total_weight();
    let mut table = DrawTable::new(members.iter().map(|m| m.weight).collect());
    let mut remaining = total;
    let mut cumulative = 0u64;
    let mut selected = Vec::new();

    for round in 1.. {
        let idx = draw_stream(roster, round)?.rem_u64(remaining);
        let pos = table.find(idx);
        let member = &members[pos];
        table.remove(pos);
        remaining -= member.weight;
        cumulative += member.weight;
        selected.push(SelectedNode {
            node_id: member.node_id,
            weight: member.weight,
            round,
        });
        if threshold.is_met(cumulative, total) {
            break;
        }
    }

    Ok(ActiveSet {
        epoch: roster.epoch,
        selected,
        cumulative_weight: cumulative,
        total_weight: total,
        threshold,
        layer_of: BTreeMap::new(),
    })
}

/// Places each selected node in layer `hash_int(y) mod layers`.
pub fn assign_layers(
    active: &ActiveSet,
    roster: &ValidatedRoster,
    layers: u32,
) -> Result<ActiveSet, SelectionError> {
    if layers == 0 {
        return Err(SelectionError::ZeroLayers);
    }
    let mut out = active.clone();
    out.layer_of = active
        .selected
        .iter()
        .map(|s| {
            let member = roster
                .member(&s.node_id)
                .ok_or(SelectionError::NotInRoster(s.node_id))?;
            Ok((s.node_id, member.hash_int.rem_u64(u64::from(layers)) as u32))
        })
        .collect::<Result<_, SelectionError>>()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::PublicKey;
    use crate::roster::RosterMember;
    use proptest::prelude::*;

    fn id(b: u8) -> NodeId {
        PublicKey::from_bytes([b; 32])
    }

    fn abc() -> WeightTable {
        WeightTable::from_segments(vec![(id(b'a'), 5), (id(b'b'), 3), (id(b'c'), 2)]).unwrap()
    }

    #[test]
    fn table_lookup_boundaries() {
        let t = abc();
        assert_eq!(t.total_weight(), 10);
        assert_eq!(t.lookup(0).unwrap(), id(b'a'));
        assert_eq!(t.lookup(4).unwrap(), id(b'a'));
        assert_eq!(t.lookup(5).unwrap(), id(b'b'));
        assert_eq!(t.lookup(9).unwrap(), id(b'c'));
        assert!(matches!(
            t.lookup(10),
            Err(SelectionError::OutOfRange { idx: 10, total: 10 })
        ));
    }

    #[test]
    fn table_remove_compacts() {
        let t = abc().remove(&id(b'b')).unwrap();
        assert_eq!(t.segments(), &[(id(b'a'), 5), (id(b'c'), 2)]);
        assert_eq!(t.total_weight(), 7);
        assert_eq!(t.lookup(5).unwrap(), id(b'c'));

        let t = abc().remove(&id(b'a')).unwrap();
        assert_eq!(t.total_weight(), 5);
        assert_eq!(t.lookup(0).unwrap(), id(b'b'));

        let single = WeightTable::from_segments(vec![(id(1), 7)]).unwrap();
        assert_eq!(single.total_weight(), 7);
        let empty = single.remove(&id(1)).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.total_weight(), 0);
        assert!(matches!(
            abc().remove(&id(9)),
            Err(SelectionError::UnknownNode(_))
        ));
    }

    #[test]
    fn table_from_empty_roster() {
        let roster = ValidatedRoster::from_members(0, [0; 32], vec![]);
        let t = WeightTable::build(&roster).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.total_weight(), 0);
    }

    fn roster_of(weights: &[u64], salt: u8) -> ValidatedRoster {
        let members = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| RosterMember::new(id(i as u8), w, vec![salt, i as u8, 0xa5]))
            .collect();
        ValidatedRoster::from_members(1, [salt; 32], members)
    }

    #[test]
    fn table_follows_roster_order() {
        let roster = roster_of(&[5, 3, 2], 0);
        let t = WeightTable::build(&roster).unwrap();
        let order: Vec<_> = roster
            .members()
            .iter()
            .map(|m| (m.node_id, m.weight))
            .collect();
        assert_eq!(t.segments(), &order[..]);
        assert_eq!(t.total_weight(), 10);
    }

    #[test]
    fn draw_stream_positions_and_counter() {
        let roster = roster_of(&[1, 1, 1], 4);
        let ms = roster.members();
        assert_eq!(draw_stream(&roster, 1).unwrap(), ms[0].hash_int);
        assert_eq!(draw_stream(&roster, 2).unwrap(), ms[1].hash_int);
        let wrapped = draw_stream(&roster, 4).unwrap();
        let expected = digest_parts(&[&ms[0].commitment, &1u64.to_be_bytes()]);
        assert_eq!(wrapped.to_be_bytes(), expected);
        assert_ne!(wrapped, ms[0].hash_int);
        assert_eq!(draw_stream(&roster, 0), Err(SelectionError::ZeroRound));
        let empty = ValidatedRoster::from_members(0, [0; 32], vec![]);
        assert_eq!(draw_stream(&empty, 1), Err(SelectionError::EmptyRoster));
    }

    #[test]
    fn threshold_parsing() {
        assert_eq!(
            "0.5".parse::<Threshold>().unwrap(),
            Threshold::new(1, 2).unwrap()
        );
        assert_eq!(
            "1/2".parse::<Threshold>().unwrap(),
            Threshold::new(1, 2).unwrap()
        );
        assert_eq!("1".parse::<Threshold>().unwrap(), Threshold::FULL);
        assert_eq!("1.0".parse::<Threshold>().unwrap(), Threshold::FULL);
        assert_eq!(
            ".25".parse::<Threshold>().unwrap(),
            Threshold::new(1, 4).unwrap()
        );
        for bad in ["0", "0.0", "1.5", "-0.5", "abc", "", "2/1", "0/3", "1/0"] {
            assert!(bad.parse::<Threshold>().is_err(), "{bad}");
        }
    }

    #[test]
    fn full_threshold_selects_everyone() {
        let roster = roster_of(&[4, 1, 7, 2, 2], 9);
        let a = select_active_set(&roster, Threshold::FULL).unwrap();
        assert_eq!(a.selected.len(), 5);
        assert_eq!(a.cumulative_weight, 16);
        let rounds: Vec<_> = a.selected.iter().map(|s| s.round).collect();
        assert_eq!(rounds, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn single_node_selected_first_round() {
        let roster = roster_of(&[3], 1);
        let a = select_active_set(&roster, Threshold::new(1, 2).unwrap()).unwrap();
        assert_eq!(a.node_ids(), vec![id(0)]);
        assert_eq!(a.selected[0].round, 1);
    }

    #[test]
    fn selection_errors() {
        let empty = ValidatedRoster::from_members(0, [0; 32], vec![]);
        assert_eq!(
            select_active_set(&empty, Threshold::FULL),
            Err(SelectionError::EmptyRoster)
        );
        let zero = roster_of(&[1, 0], 0);
        assert!(matches!(
            select_active_set(&zero, Threshold::FULL),
            Err(SelectionError::ZeroWeight(_))
        ));
    }

    #[test]
    fn layers() {
        let roster = roster_of(&[1, 1, 1, 1, 1, 1], 3);
        let a = select_active_set(&roster, Threshold::FULL).unwrap();
        let one = assign_layers(&a, &roster, 1).unwrap();
        assert!(one.layer_of.values().all(|&l| l == 0));
        let two = assign_layers(&a, &roster, 2).unwrap();
        for m in roster.members() {
            let parity = (m.hash_int.to_be_bytes()[31] & 1) as u32;
            assert_eq!(two.layer_of[&m.node_id], parity);
        }
        assert_eq!(
            assign_layers(&a, &roster, 0),
            Err(SelectionError::ZeroLayers)
        );
    }

    /// Direct transcription of the table walk using `WeightTable` values.
    fn reference_select(roster: &ValidatedRoster, tau: Threshold) -> Vec<(NodeId, u64)> {
        let mut table = WeightTable::build(roster).unwrap();
        let total = table.total_weight();
        let mut cumulative = 0;
        let mut out = Vec::new();
        for round in 1.. {
            let idx = draw_stream(roster, round)
                .unwrap()
                .rem_u64(table.total_weight());
            let node = table.lookup(idx).unwrap();
            let w = roster.member(&node).unwrap().weight;
            table = table.remove(&node).unwrap();
            cumulative += w;
            out.push((node, round));
            if tau.is_met(cumulative, total) {
                break;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn fast_path_matches_table_walk(
            weights in prop::collection::vec(1u64..50, 1..40),
            salt in any::<u8>(),
            num in 1u64..=20,
        ) {
            let tau = Threshold::new(num, 20).unwrap();
            let roster = roster_of(&weights, salt);
            let fast = select_active_set(&roster, tau).unwrap();
            let got: Vec<_> = fast.selected.iter().map(|s| (s.node_id, s.round)).collect();
            prop_assert_eq!(got, reference_select(&roster, tau));
        }

        #[test]
        fn threshold_met_minimally_without_duplicates(
            weights in prop::collection::vec(1u64..1000, 1..30),
            salt in any::<u8>(),
            num in 1u64..=100,
        ) {
            let tau = Threshold::new(num, 100).unwrap();
            let roster = roster_of(&weights, salt);
            let a = select_active_set(&roster, tau).unwrap();
            let total: u64 = weights.iter().sum();
            prop_assert!(tau.is_met(a.cumulative_weight, total));
            let last = a.selected.last().unwrap().weight;
            prop_assert!(!tau.is_met(a.cumulative_weight - last, total));
            let mut ids = a.node_ids();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), a.selected.len());
            prop_assert!(a.selected.len() <= weights.len());
        }

        #[test]
        fn table_intervals_are_exhaustive(weights in prop::collection::vec(1u64..20, 1..15)) {
            let segs: Vec<_> = weights.iter().enumerate().map(|(i, &w)| (id(i as u8), w)).collect();
            let t = WeightTable::from_segments(segs).unwrap();
            let mut counts = vec![0u64; weights.len()];
            for idx in 0..t.total_weight() {
                let node = t.lookup(idx).unwrap();
                counts[node.as_bytes()[0] as usize] += 1;
            }
            prop_assert_eq!(counts, weights);
        }
    }
}
