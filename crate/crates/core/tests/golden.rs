//! Fixed three-node instance with expected outputs computed by an
//! independent implementation (Python hashlib + pyca/cryptography).

use verasel_core::crypto::{keygen, Backend, KeyPair};
use verasel_core::protocol::honest_roster;
use verasel_core::selection::{assign_layers, select_active_set};
use verasel_core::Threshold;

const SEED: [u8; 32] = [7; 32];

fn nodes() -> Vec<(KeyPair, u64)> {
    vec![
        (keygen(Some(b"golden-a")), 5),
        (keygen(Some(b"golden-b")), 3),
        (keygen(Some(b"golden-c")), 2),
    ]
}

#[test]
fn golden_key_derivation() {
    assert_eq!(
        keygen(Some(b"golden-a")).node_id().to_hex(),
        "709989f810716beea4689831b9e4bf2009c188e130503ed28db0299f52b3d5c3"
    );
}

#[test]
fn golden_roster_order() {
    let n = nodes();
    let roster = honest_roster(&n, &SEED, Backend::Mock);
    let order: Vec<_> = roster.members().iter().map(|m| m.node_id).collect();
    assert_eq!(
        order,
        vec![n[1].0.node_id(), n[0].0.node_id(), n[2].0.node_id()]
    );
}

#[test]
fn golden_selections() {
    let n = nodes();
    let (a, b, c) = (n[0].0.node_id(), n[1].0.node_id(), n[2].0.node_id());
    let roster = honest_roster(&n, &SEED, Backend::Mock);
    let cases = [
        ((1, 2), vec![(a, 1)]),
        ((7, 10), vec![(a, 1), (b, 2)]),
        ((1, 1), vec![(a, 1), (b, 2), (c, 3)]),
    ];
    for ((num, den), expected) in cases {
        let set = select_active_set(&roster, Threshold::new(num, den).unwrap()).unwrap();
        let got: Vec<_> = set.selected.iter().map(|s| (s.node_id, s.round)).collect();
        assert_eq!(got, expected, "threshold {num}/{den}");
    }

    let all = select_active_set(&roster, Threshold::FULL).unwrap();
    let layered = assign_layers(&all, &roster, 3).unwrap();
    assert_eq!(layered.layer_of[&a], 2);
    assert_eq!(layered.layer_of[&b], 1);
    assert_eq!(layered.layer_of[&c], 0);
}
