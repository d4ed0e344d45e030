//! Ed25519 key plumbing with deterministic seed derivation.
//!
//! Every party in the simulation (oracle, notary, TEE vendor, platform,
//! enclave report key, server identity) derives its keypair from a role
//! string plus a `u64` seed, so fixtures are reproducible end to end.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical::{b64, Hash32};

/// Signing keypair for one simulated party.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
}

impl Keypair {
    /// Deterministic derivation: distinct `(role, seed)` pairs yield
    /// independent keys.
    pub fn from_seed(role: &str, seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"hotproof-key-v1\0");
        h.update((role.len() as u32).to_be_bytes());
        h.update(role.as_bytes());
        h.update(seed.to_be_bytes());
        let secret: [u8; 32] = h.finalize().into();
        Keypair {
            signing: SigningKey::from_bytes(&secret),
        }
    }

    pub fn public(&self) -> PubKey {
        PubKey(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> SigBytes {
        SigBytes(self.signing.sign(message).to_bytes().to_vec())
    }
}

impl std::fmt::Debug for Keypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Keypair({})", self.public())
    }
}

/// Ed25519 public key, base64 on the wire.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PubKey(pub [u8; 32]);

impl PubKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// True iff `sig` is a valid signature over `message` under this key.
    /// Malformed keys or signatures verify as false rather than erroring.
    pub fn verify(&self, message: &[u8], sig: &SigBytes) -> bool {
        let Ok(vk) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let Ok(raw) = <[u8; 64]>::try_from(sig.0.as_slice()) else {
            return false;
        };
        vk.verify(message, &Signature::from_bytes(&raw)).is_ok()
    }

    /// SHA-256 of the raw key bytes; used as a key identifier.
    pub fn fingerprint(&self) -> Hash32 {
        Hash32::of(&self.0)
    }
}

impl std::fmt::Debug for PubKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PubKey({})", b64::encode(&self.0))
    }
}

impl std::fmt::Display for PubKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&b64::encode(&self.0))
    }
}

impl Serialize for PubKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&b64::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for PubKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let raw = b64::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| serde::de::Error::custom("public key must be 32 bytes"))?;
        Ok(PubKey(arr))
    }
}

/// Signature bytes, base64 on the wire. Kept as a plain vector so that
/// truncated or mangled signatures still deserialize and then fail
/// verification instead of failing parsing.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigBytes(#[serde(with = "b64")] pub Vec<u8>);

impl std::fmt::Debug for SigBytes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SigBytes({})", b64::encode(&self.0))
    }
}
