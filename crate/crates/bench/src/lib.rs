//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use verasel_core::board::{Board, Clock, Phase};
use verasel_core::crypto::{Backend, KeyPair};
use verasel_core::protocol::{node_post, node_setup};
use verasel_core::seedchain::Seed;

pub const SEED: Seed = [42; 32];

/// `n` keys with weights in `1..=100`.
pub fn nodes(n: usize) -> Vec<(KeyPair, u64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(n as u64);
    (0..n)
        .map(|_| (KeyPair::generate(&mut rng), rng.gen_range(1..=100)))
        .collect()
}

/// A board where every node posted in epoch 0 and committed in epoch 1.
pub fn populated_board(nodes: &[(KeyPair, u64)], backend: Backend) -> Board {
    let mut board = Board::new();
    for (key, w) in nodes {
        node_post(key, *w, &mut board, 0).expect("post");
    }
    board.advance_to(Clock::new(1, Phase::Setup));
    for (key, _) in nodes {
        node_setup(key, &mut board, 1, &SEED, backend).expect("setup");
    }
    board
}
