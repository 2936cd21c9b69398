//! ECVRF-EDWARDS25519-SHA512-TAI (RFC 9381, suite 0x03).
//!
//! Keys share the Ed25519 format: the 32-byte secret is expanded with
//! SHA-512 and clamped, and the public key is the compressed point `x*B`.

use curve25519_dalek::constants::ED25519_BASEPOINT_POINT;
use curve25519_dalek::edwards::{CompressedEdwardsY, EdwardsPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::IsIdentity;
use sha2::{Digest, Sha512};

pub const SUITE: u8 = 0x03;
pub const PROOF_LEN: usize = 80;
pub const OUTPUT_LEN: usize = 64;
const CHALLENGE_LEN: usize = 16;

/// Secret scalar `x` and the nonce-derivation prefix from RFC 8032 expansion.
fn expand_secret(secret: &[u8; 32]) -> (Scalar, [u8; 32]) {
    let digest = Sha512::digest(secret);
    let mut scalar_bytes = [0u8; 32];
    scalar_bytes.copy_from_slice(&digest[..32]);
    scalar_bytes[0] &= 248;
    scalar_bytes[31] &= 127;
    scalar_bytes[31] |= 64;
    let mut prefix = [0u8; 32];
    prefix.copy_from_slice(&digest[32..]);
    (Scalar::from_bytes_mod_order(scalar_bytes), prefix)
}

pub fn public_key(secret: &[u8; 32]) -> [u8; 32] {
    let (x, _) = expand_secret(secret);
    (ED25519_BASEPOINT_POINT * x).compress().to_bytes()
}

/// RFC 8032 point decoding. Non-canonical encodings are rejected.
fn string_to_point(bytes: &[u8]) -> Option<EdwardsPoint> {
    let compressed = CompressedEdwardsY::from_slice(bytes).ok()?;
    let point = compressed.decompress()?;
    (point.compress() == compressed).then_some(point)
}

fn encode_to_curve(pk: &[u8; 32], alpha: &[u8]) -> EdwardsPoint {
    for ctr in 0u8..=255 {
        let hash = Sha512::new()
            .chain_update([SUITE, 0x01])
            .chain_update(pk)
            .chain_update(alpha)
            .chain_update([ctr, 0x00])
            .finalize();
        if let Some(point) = string_to_point(&hash[..32]) {
            return point.mul_by_cofactor();
        }
    }
    // Each attempt succeeds with probability close to 1/2.
    unreachable!("try-and-increment exhausted 256 attempts")
}

fn challenge(points: [&EdwardsPoint; 5]) -> [u8; CHALLENGE_LEN] {
    let mut hasher = Sha512::new().chain_update([SUITE, 0x02]);
    for p in points {
        hasher.update(p.compress().as_bytes());
    }
    hasher.update([0x00]);
    let digest = hasher.finalize();
    let mut c = [0u8; CHALLENGE_LEN];
    c.copy_from_slice(&digest[..CHALLENGE_LEN]);
    c
}

fn challenge_scalar(c: &[u8; CHALLENGE_LEN]) -> Scalar {
    let mut wide = [0u8; 32];
    wide[..CHALLENGE_LEN].copy_from_slice(c);
    Scalar::from_bytes_mod_order(wide)
}

fn gamma_to_hash(gamma: &EdwardsPoint) -> [u8; OUTPUT_LEN] {
    let digest = Sha512::new()
        .chain_update([SUITE, 0x03])
        .chain_update(gamma.mul_by_cofactor().compress().as_bytes())
        .chain_update([0x00])
        .finalize();
    let mut out = [0u8; OUTPUT_LEN];
    out.copy_from_slice(&digest);
    out
}

/// Returns `(beta, pi)`.
pub fn prove(secret: &[u8; 32], alpha: &[u8]) -> ([u8; OUTPUT_LEN], [u8; PROOF_LEN]) {
    let (x, prefix) = expand_secret(secret);
    let y_point = ED25519_BASEPOINT_POINT * x;
    let pk = y_point.compress().to_bytes();

    let h = encode_to_curve(&pk, alpha);
    let h_string = h.compress().to_bytes();
    let gamma = h * x;

    let nonce = Sha512::new()
        .chain_update(prefix)
        .chain_update(h_string)
        .finalize();
    let k = Scalar::from_bytes_mod_order_wide(&nonce.into());

    let u = ED25519_BASEPOINT_POINT * k;
    let v = h * k;
    let c = challenge([&y_point, &h, &gamma, &u, &v]);
    let s = k + challenge_scalar(&c) * x;

    let mut pi = [0u8; PROOF_LEN];
    pi[..32].copy_from_slice(gamma.compress().as_bytes());
    pi[32..48].copy_from_slice(&c);
    pi[48..].copy_from_slice(s.as_bytes());
    (gamma_to_hash(&gamma), pi)
}

/// Verifies `pi` and returns the VRF output it commits to.
pub fn verify(pk: &[u8], alpha: &[u8], pi: &[u8]) -> Option<[u8; OUTPUT_LEN]> {
    let pk: [u8; 32] = pk.try_into().ok()?;
    let y_point = string_to_point(&pk)?;
    if y_point.mul_by_cofactor().is_identity() {
        return None;
    }
    if pi.len() != PROOF_LEN {
        return None;
    }
    let gamma = string_to_point(&pi[..32])?;
    let c: [u8; CHALLENGE_LEN] = pi[32..48].try_into().ok()?;
    let s: [u8; 32] = pi[48..].try_into().ok()?;
    let s = Option::<Scalar>::from(Scalar::from_canonical_bytes(s))?;

    let h = encode_to_curve(&pk, alpha);
    let c_scalar = challenge_scalar(&c);
    let u = ED25519_BASEPOINT_POINT * s - y_point * c_scalar;
    let v = h * s - gamma * c_scalar;
    (challenge([&y_point, &h, &gamma, &u, &v]) == c).then(|| gamma_to_hash(&gamma))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Vector {
        sk: &'static str,
        pk: &'static str,
        alpha: &'static str,
        /// Leading bytes of the encoded proof (Gamma, then c || s where known).
        pi_prefix: &'static str,
        beta: &'static str,
    }

    // RFC 9381 appendix B.3, examples 16-18.
    const VECTORS: [Vector; 3] = [
        Vector {
            sk: "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
            pk: "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a",
            alpha: "",
            pi_prefix: "8657106690b5526245a92b003bb079ccd1a92130477671f6fc01ad16f26f723f26f8a57ccaed74ee1b190bed1f479d9727d2d0f9b005a6e456a35d4fb0daab1268a1b0db10836d9826a528ca76567805",
            beta: "90cf1df3b703cce59e2a35b925d411164068269d7b2d29f3301c03dd757876ff66b71dda49d2de59d03450451af026798e8f81cd2e333de5cdf4f3e140fdd8ae",
        },
        Vector {
            sk: "4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
            pk: "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c",
            alpha: "72",
            pi_prefix: "f3141cd382dc42909d19ec5110469e4feae18300e94f304590abdced48aed593",
            beta: "eb4440665d3891d668e7e0fcaf587f1b4bd7fbfe99d0eb2211ccec90496310eb5e33821bc613efb94db5e5b54c70a848a0bef4553a41befc57663b56373a5031",
        },
        Vector {
            sk: "c5aa8df43f9f837bedb7442f31dcb7b166d38535076f094b85ce3a2e0b4458f7",
            pk: "fc51cd8e6218a1a38da47ed00230f0580816ed13ba3303ac5deb911548908025",
            alpha: "af82",
            pi_prefix: "9bc0f79119cc5604bf02d23b4caede71393cedfbb191434dd016d30177ccbf8096bb474e53895c362d8628ee9f9ea3c0e52c7a5c691b6c18c9979866568add7a2d41b00b05081ed0f58ee5e31b3a970e",
            beta: "645427e5d00c62a23fb703732fa5d892940935942101e456ecca7bb217c61c452118fec1219202a0edcf038bb6373241578be7217ba85a2687f7a0310b2df19f",
        },
    ];

    fn sk(v: &Vector) -> [u8; 32] {
        hex::decode(v.sk).unwrap().try_into().unwrap()
    }

    #[test]
    fn public_keys_match_vectors() {
        for v in &VECTORS {
            assert_eq!(hex::encode(public_key(&sk(v))), v.pk);
        }
    }

    #[test]
    fn prove_matches_vectors() {
        for v in &VECTORS {
            let (beta, pi) = prove(&sk(v), &hex::decode(v.alpha).unwrap());
            assert!(
                hex::encode(pi).starts_with(v.pi_prefix),
                "proof for alpha={}",
                v.alpha
            );
            assert_eq!(hex::encode(beta), v.beta, "output for alpha={}", v.alpha);
        }
    }

    #[test]
    fn verify_accepts_published_proof() {
        let v = &VECTORS[0];
        let pk = hex::decode(v.pk).unwrap();
        let pi = hex::decode(v.pi_prefix).unwrap();
        assert_eq!(pi.len(), PROOF_LEN);
        let beta = verify(&pk, b"", &pi).expect("published proof verifies");
        assert_eq!(hex::encode(beta), v.beta);
    }

    #[test]
    fn verify_round_trips_every_vector_key() {
        for v in &VECTORS {
            let pk = hex::decode(v.pk).unwrap();
            let alpha = hex::decode(v.alpha).unwrap();
            let (beta, pi) = prove(&sk(v), &alpha);
            assert_eq!(verify(&pk, &alpha, &pi), Some(beta));
            let mut other = alpha.clone();
            other.push(0);
            assert_eq!(verify(&pk, &other, &pi), None);
        }
    }

    #[test]
    fn rejects_malformed_proofs() {
        let v = &VECTORS[0];
        let pk = hex::decode(v.pk).unwrap();
        let pi = hex::decode(v.pi_prefix).unwrap();
        assert!(verify(&pk, b"", &pi[..79]).is_none());
        assert!(verify(&pk[..31], b"", &pi).is_none());
        // s >= group order
        let mut bad = pi.clone();
        bad[48..].copy_from_slice(&[0xff; 32]);
        assert!(verify(&pk, b"", &bad).is_none());
        // identity public key is low order
        let mut identity = [0u8; 32];
        identity[0] = 1;
        assert!(verify(&identity, b"", &pi).is_none());
    }
}
