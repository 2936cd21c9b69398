//! Keys, signatures, VRF backends and the hash-to-integer map.
//!
//! Both VRF backends consume the same Ed25519-format keypair, so a node's
//! public key is simultaneously its signature key, its VRF key and its
//! identifier on the bulletin board.

pub mod ecvrf;
pub mod mock;

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed secret key: expected {KEY_LEN} bytes, got {0}")]
    MalformedSecretKey(usize),
    #[error("malformed public key: expected {KEY_LEN} bytes, got {0}")]
    MalformedPublicKey(usize),
    #[error("malformed signature: expected {SIGNATURE_LEN} bytes, got {0}")]
    MalformedSignature(usize),
    #[error("unknown VRF backend `{0}`")]
    UnknownBackend(String),
    #[error("key file: {0}")]
    KeyFile(String),
}

/// SHA-256, the hash `H` used throughout the protocol.
pub fn digest(data: &[u8]) -> [u8; DIGEST_LEN] {
    Sha256::digest(data).into()
}

/// SHA-256 over the concatenation of `parts`.
pub fn digest_parts(parts: &[&[u8]]) -> [u8; DIGEST_LEN] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Unsigned 256-bit integer produced by [`hash_to_int`], stored big-endian.
///
/// Byte-wise ordering of the array is numeric ordering.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HashInt([u8; DIGEST_LEN]);

impl HashInt {
    pub const fn from_be_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Self(bytes)
    }

    pub fn to_be_bytes(&self) -> [u8; DIGEST_LEN] {
        self.0
    }

    /// `self mod modulus`. Panics on a zero modulus.
    pub fn rem_u64(&self, modulus: u64) -> u64 {
        assert!(modulus > 0, "modulus must be positive");
        let m = u128::from(modulus);
        let r = self
            .0
            .iter()
            .fold(0u128, |acc, &b| ((acc << 8) | u128::from(b)) % m);
        r as u64
    }
}

impl fmt::Debug for HashInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashInt({})", hex::encode(self.0))
    }
}

impl fmt::Display for HashInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// Digest of `data` read as a big-endian integer in `[0, 2^256)`.
pub fn hash_to_int(data: &[u8]) -> HashInt {
    HashInt(digest(data))
}

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; KEY_LEN]);

impl SecretKey {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(Self)
            .map_err(|_| CryptoError::MalformedSecretKey(bytes.len()))
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// Compressed Edwards point; doubles as the node identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; KEY_LEN]);

/// A mixnode is identified by its public key.
pub type NodeId = PublicKey;

impl PublicKey {
    pub const fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(Self)
            .map_err(|_| CryptoError::MalformedPublicKey(bytes.len()))
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let raw = hex::decode(s).map_err(|e| CryptoError::KeyFile(e.to_string()))?;
        Self::from_slice(&raw)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature([u8; SIGNATURE_LEN]);

impl Signature {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(Self)
            .map_err(|_| CryptoError::MalformedSignature(bytes.len()))
    }

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn from_secret(secret: &SecretKey) -> Self {
        let signing = SigningKey::from_bytes(secret.as_bytes());
        let public = PublicKey(signing.verifying_key().to_bytes());
        Self { signing, public }
    }

    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut secret = [0u8; KEY_LEN];
        rng.fill_bytes(&mut secret);
        Self::from_secret(&SecretKey(secret))
    }

    pub fn secret(&self) -> SecretKey {
        SecretKey(self.signing.to_bytes())
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn node_id(&self) -> NodeId {
        self.public
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.public == other.public && self.signing.to_bytes() == other.signing.to_bytes()
    }
}

impl Eq for KeyPair {}

/// Fresh keypair from the OS RNG, or a deterministic one derived from `seed`.
pub fn keygen(seed: Option<&[u8]>) -> KeyPair {
    match seed {
        Some(seed) => {
            let secret = digest_parts(&[b"verasel/keygen", seed]);
            KeyPair::from_secret(&SecretKey(secret))
        }
        None => KeyPair::generate(&mut OsRng),
    }
}

/// Signs `msg` with a raw secret key.
pub fn sign(secret: &[u8], msg: &[u8]) -> Result<Signature, CryptoError> {
    let secret = SecretKey::from_slice(secret)?;
    Ok(KeyPair::from_secret(&secret).sign(msg))
}

/// Strict Ed25519 verification; any malformed input is a rejection.
pub fn verify_sig(pk: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&pk.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    key.verify_strict(msg, &sig).is_ok()
}

/// A VRF commitment `y` together with its proof `pi`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VrfOutput {
    pub commitment: Vec<u8>,
    pub proof: Vec<u8>,
}

/// Backend-agnostic VRF contract.
pub trait Vrf {
    fn prove(&self, key: &KeyPair, input: &[u8]) -> VrfOutput;

    /// True iff `output` is what the holder of `pk`'s secret key would
    /// produce on `input`. Never panics on malformed data.
    fn verify(&self, pk: &PublicKey, input: &[u8], output: &VrfOutput) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EcVrf;

impl Vrf for EcVrf {
    fn prove(&self, key: &KeyPair, input: &[u8]) -> VrfOutput {
        let (beta, pi) = ecvrf::prove(key.secret().as_bytes(), input);
        VrfOutput {
            commitment: beta.to_vec(),
            proof: pi.to_vec(),
        }
    }

    fn verify(&self, pk: &PublicKey, input: &[u8], output: &VrfOutput) -> bool {
        ecvrf::verify(pk.as_bytes(), input, &output.proof)
            .is_some_and(|beta| beta[..] == output.commitment[..])
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockVrf;

impl Vrf for MockVrf {
    fn prove(&self, key: &KeyPair, input: &[u8]) -> VrfOutput {
        let (y, pi) = mock::prove(key.secret().as_bytes(), key.public().as_bytes(), input);
        VrfOutput {
            commitment: y.to_vec(),
            proof: pi.to_vec(),
        }
    }

    fn verify(&self, pk: &PublicKey, input: &[u8], output: &VrfOutput) -> bool {
        mock::verify(pk.as_bytes(), input, &output.commitment, &output.proof)
    }
}

/// Runtime backend selection. The elliptic-curve VRF is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Backend {
    #[default]
    Ecvrf,
    Mock,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Ecvrf => "ecvrf",
            Backend::Mock => "mock",
        }
    }

    pub fn output_len(self) -> usize {
        match self {
            Backend::Ecvrf => ecvrf::OUTPUT_LEN,
            Backend::Mock => mock::OUTPUT_LEN,
        }
    }
}

impl Vrf for Backend {
    fn prove(&self, key: &KeyPair, input: &[u8]) -> VrfOutput {
        match self {
            Backend::Ecvrf => EcVrf.prove(key, input),
            Backend::Mock => MockVrf.prove(key, input),
        }
    }

    fn verify(&self, pk: &PublicKey, input: &[u8], output: &VrfOutput) -> bool {
        match self {
            Backend::Ecvrf => EcVrf.verify(pk, input, output),
            Backend::Mock => MockVrf.verify(pk, input, output),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "ecvrf" => Ok(Backend::Ecvrf),
            "mock" => Ok(Backend::Mock),
            other => Err(CryptoError::UnknownBackend(other.to_string())),
        }
    }
}

const KEY_FILE_TAG: &str = "verasel-key v1";

/// Text key file: a format tag naming the backend, then hex-encoded keys.
///
/// ```text
/// verasel-key v1 ecvrf
/// secret 9d61b19d...
/// public d75a9801...
/// ```
pub fn encode_key_file(key: &KeyPair, backend: Backend) -> String {
    format!(
        "{KEY_FILE_TAG} {}\nsecret {}\npublic {}\n",
        backend.name(),
        hex::encode(key.secret().as_bytes()),
        key.public().to_hex()
    )
}

pub fn decode_key_file(text: &str) -> Result<(KeyPair, Backend), CryptoError> {
    let bad = |msg: &str| CryptoError::KeyFile(msg.to_string());
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    let backend = header
        .strip_prefix(KEY_FILE_TAG)
        .ok_or_else(|| bad("missing format tag"))?
        .parse::<Backend>()?;
    let mut field = |name: &str| -> Result<Vec<u8>, CryptoError> {
        let line = lines.next().ok_or_else(|| bad("truncated file"))?;
        let value = line
            .strip_prefix(name)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| CryptoError::KeyFile(format!("expected `{name}` line")))?;
        hex::decode(value.trim()).map_err(|e| CryptoError::KeyFile(e.to_string()))
    };
    let secret = SecretKey::from_slice(&field("secret")?)?;
    let public = PublicKey::from_slice(&field("public")?)?;
    let key = KeyPair::from_secret(&secret);
    if key.public() != public {
        return Err(bad("public key does not match secret key"));
    }
    Ok((key, backend))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::collections::HashSet;

    #[test]
    fn keygen_is_deterministic_under_seed() {
        let a = keygen(Some(&[0u8; 32]));
        let b = keygen(Some(&[0u8; 32]));
        assert_eq!(a, b);
        assert_ne!(a.public(), keygen(Some(&[1u8; 32])).public());
    }

    #[test]
    fn keygen_without_seed_is_fresh() {
        assert_ne!(keygen(None).public(), keygen(None).public());
    }

    #[test]
    fn keypair_signs_for_its_public_key() {
        let key = keygen(Some(b"s"));
        let sig = key.sign(b"msg");
        assert!(verify_sig(&key.public(), b"msg", &sig));
        assert!(!verify_sig(&key.public(), b"msh", &sig));
        let other = keygen(Some(b"t"));
        assert!(!verify_sig(&other.public(), b"msg", &sig));
    }

    #[test]
    fn sign_rejects_malformed_secret() {
        assert_eq!(
            sign(&[1, 2, 3], b"m"),
            Err(CryptoError::MalformedSecretKey(3))
        );
        let key = keygen(Some(b"k"));
        let sig = sign(key.secret().as_bytes(), b"m").unwrap();
        assert_eq!(sig, key.sign(b"m"));
    }

    #[test]
    fn verify_sig_tolerates_garbage() {
        let key = keygen(Some(b"g"));
        let sig = key.sign(b"m");
        // Not a valid curve point.
        let junk = PublicKey::from_bytes([0xff; 32]);
        assert!(!verify_sig(&junk, b"m", &sig));
        let zero = Signature::from_slice(&[0u8; 64]).unwrap();
        assert!(!verify_sig(&key.public(), b"m", &zero));
        assert!(Signature::from_slice(&[0u8; 63]).is_err());
    }

    #[test]
    fn ecvrf_public_key_equals_signature_key() {
        let key = keygen(Some(b"same"));
        assert_eq!(
            ecvrf::public_key(key.secret().as_bytes()),
            *key.public().as_bytes()
        );
    }

    fn backends() -> [Backend; 2] {
        [Backend::Ecvrf, Backend::Mock]
    }

    #[test]
    fn vrf_round_trip_and_determinism() {
        let key = keygen(Some(b"vrf"));
        for backend in backends() {
            let out = backend.prove(&key, b"seed");
            assert_eq!(out, backend.prove(&key, b"seed"), "{backend}");
            assert_eq!(out.commitment.len(), backend.output_len());
            assert!(backend.verify(&key.public(), b"seed", &out));
            assert_ne!(out.commitment, backend.prove(&key, b"seed2").commitment);
        }
    }

    #[test]
    fn vrf_single_bit_perturbations_are_rejected() {
        let key = keygen(Some(b"flip"));
        let other = keygen(Some(b"other"));
        for backend in backends() {
            let out = backend.prove(&key, b"a");
            for i in 0..out.commitment.len() * 8 {
                let mut bad = out.clone();
                bad.commitment[i / 8] ^= 1 << (i % 8);
                assert!(!backend.verify(&key.public(), b"a", &bad));
            }
            for i in 0..out.proof.len() * 8 {
                let mut bad = out.clone();
                bad.proof[i / 8] ^= 1 << (i % 8);
                assert!(!backend.verify(&key.public(), b"a", &bad));
            }
            for i in 0..8 {
                let input = [b'a' ^ (1 << i)];
                assert!(!backend.verify(&key.public(), &input, &out));
                let mut pk = *key.public().as_bytes();
                pk[i] ^= 1;
                assert!(!backend.verify(&PublicKey::from_bytes(pk), b"a", &out));
            }
            assert!(!backend.verify(&other.public(), b"a", &out));
        }
    }

    #[test]
    fn vrf_verify_never_panics_on_truncation() {
        let key = keygen(Some(b"t"));
        for backend in backends() {
            let out = backend.prove(&key, b"a");
            let short = VrfOutput {
                commitment: out.commitment[..3].to_vec(),
                proof: vec![],
            };
            assert!(!backend.verify(&key.public(), b"a", &short));
        }
    }

    #[test]
    fn hash_to_int_of_empty_string() {
        // sha256("") computed independently (coreutils sha256sum).
        let expected = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
        assert_eq!(hash_to_int(b"").to_string(), expected);
        assert_eq!(hash_to_int(b"x"), hash_to_int(b"x"));
    }

    #[test]
    fn rem_u64_matches_small_cases() {
        let mut bytes = [0u8; 32];
        bytes[31] = 10;
        bytes[30] = 1; // 266
        let v = HashInt::from_be_bytes(bytes);
        assert_eq!(v.rem_u64(7), 266 % 7);
        assert_eq!(v.rem_u64(1), 0);
        // 2^64 = 1 mod (2^64 - 1), so 2^256 - 1 = 0 mod (2^64 - 1).
        assert_eq!(HashInt::from_be_bytes([0xff; 32]).rem_u64(u64::MAX), 0);
    }

    #[test]
    fn mock_commitments_do_not_collide() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut seen = HashSet::new();
        for _ in 0..10_000 {
            let mut secret = [0u8; 32];
            rng.fill_bytes(&mut secret);
            assert!(seen.insert(mock::output(&secret, b"fixed input")));
        }
    }

    #[test]
    fn key_file_round_trip_and_rejections() {
        let key = keygen(Some(b"file"));
        let text = encode_key_file(&key, Backend::Mock);
        assert!(text.starts_with("verasel-key v1 mock\n"));
        let (parsed, backend) = decode_key_file(&text).unwrap();
        assert_eq!(parsed, key);
        assert_eq!(backend, Backend::Mock);

        let swapped = text.replace(&key.public().to_hex(), &keygen(None).public().to_hex());
        assert!(decode_key_file(&swapped).is_err());
        assert!(decode_key_file("verasel-key v1 rsa\n").is_err());
        assert!(decode_key_file("").is_err());
    }
}
