//! Deterministic keyed-hash VRF for oracle tests and large Monte Carlo runs.
//!
//! `y = SHA-256(tag_y || sk || alpha)` and the "proof" is a hash over the
//! public tuple `(pk, alpha, y)`. It detects tampering but is trivially
//! forgeable, so it must never be the default backend.

use sha2::{Digest, Sha256};

pub const OUTPUT_LEN: usize = 32;
pub const PROOF_LEN: usize = 32;

const TAG_OUTPUT: &[u8] = b"verasel/mock-vrf/output";
const TAG_PROOF: &[u8] = b"verasel/mock-vrf/proof";

fn tuple_proof(pk: &[u8], alpha: &[u8], y: &[u8]) -> [u8; PROOF_LEN] {
    Sha256::new()
        .chain_update(TAG_PROOF)
        .chain_update((pk.len() as u64).to_be_bytes())
        .chain_update(pk)
        .chain_update((alpha.len() as u64).to_be_bytes())
        .chain_update(alpha)
        .chain_update(y)
        .finalize()
        .into()
}

pub fn output(secret: &[u8; 32], alpha: &[u8]) -> [u8; OUTPUT_LEN] {
    Sha256::new()
        .chain_update(TAG_OUTPUT)
        .chain_update(secret)
        .chain_update(alpha)
        .finalize()
        .into()
}

pub fn prove(
    secret: &[u8; 32],
    pk: &[u8; 32],
    alpha: &[u8],
) -> ([u8; OUTPUT_LEN], [u8; PROOF_LEN]) {
    let y = output(secret, alpha);
    (y, tuple_proof(pk, alpha, &y))
}

pub fn verify(pk: &[u8], alpha: &[u8], y: &[u8], pi: &[u8]) -> bool {
    y.len() == OUTPUT_LEN && pi.len() == PROOF_LEN && tuple_proof(pk, alpha, y) == pi
}
