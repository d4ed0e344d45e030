//! Attestation quotes and the simulated vendor key hierarchy.
//!
//! A quote is the simulated analogue of a hardware attestation report: the
//! platform key signs (measurement, TCB status, report data), and a
//! vendor-root-signed certificate vouches for the platform key. Verifiers
//! hold only the vendor root and a revocation list.

use serde::{Deserialize, Serialize};

use crate::canonical::{b64, from_json_bytes, sha256, to_wire_json, Hash32};
use crate::keys::{Keypair, PubKey, SigBytes};

/// Security level of the simulated platform firmware.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TcbStatus {
    #[default]
    UpToDate,
    OutOfDate,
    Revoked,
}

impl TcbStatus {
    /// One-byte tag used inside signed tuples.
    pub fn tag(&self) -> u8 {
        match self {
            TcbStatus::UpToDate => 0,
            TcbStatus::OutOfDate => 1,
            TcbStatus::Revoked => 2,
        }
    }
}

/// Hash identifying the exact code and policy loaded into an enclave.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnclaveMeasurement(pub Hash32);

impl EnclaveMeasurement {
    /// Deterministic measurement over the code identity string and the
    /// canonical policy bytes, length-prefixed to keep the fields from
    /// bleeding into each other.
    pub fn compute(code_identity: &str, policy_bytes: &[u8]) -> Self {
        let mut preimage = Vec::new();
        preimage.extend_from_slice(b"hotproof-measurement-v1\0");
        preimage.extend_from_slice(&(code_identity.len() as u32).to_be_bytes());
        preimage.extend_from_slice(code_identity.as_bytes());
        preimage.extend_from_slice(&(policy_bytes.len() as u32).to_be_bytes());
        preimage.extend_from_slice(policy_bytes);
        EnclaveMeasurement(Hash32(sha256(&preimage)))
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl std::fmt::Display for EnclaveMeasurement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Vendor-root-signed certificate for one platform signing key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformCert {
    pub platform_pubkey: PubKey,
    pub vendor_signature: SigBytes,
}

impl PlatformCert {
    pub fn signing_message(platform_pubkey: &PubKey) -> Vec<u8> {
        let mut msg = Vec::with_capacity(25 + 32);
        msg.extend_from_slice(b"hotproof-platform-cert-v1\0");
        msg.extend_from_slice(&platform_pubkey.0);
        msg
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        to_wire_json(self)
    }

    /// The identifier revocation lists are keyed by.
    pub fn key_id(&self) -> Hash32 {
        self.platform_pubkey.fingerprint()
    }
}

/// TEE manufacturer stand-in: holds the vendor root key and provisions
/// platform certificates.
pub struct TeeVendor {
    keys: Keypair,
}

impl TeeVendor {
    pub fn new(keys: Keypair) -> Self {
        TeeVendor { keys }
    }

    pub fn root_pubkey(&self) -> PubKey {
        self.keys.public()
    }

    pub fn issue_platform_cert(&self, platform_pubkey: PubKey) -> PlatformCert {
        let vendor_signature = self.keys.sign(&PlatformCert::signing_message(&platform_pubkey));
        PlatformCert {
            platform_pubkey,
            vendor_signature,
        }
    }

    pub fn trust_anchor(&self) -> VendorTrustAnchor {
        VendorTrustAnchor {
            vendor_root_pubkey: self.root_pubkey(),
            revoked: Vec::new(),
        }
    }
}

/// What a verifier pins: the vendor root key plus revoked platform key ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VendorTrustAnchor {
    pub vendor_root_pubkey: PubKey,
    #[serde(default)]
    pub revoked: Vec<Hash32>,
}

impl VendorTrustAnchor {
    pub fn revoke(&mut self, key_id: Hash32) {
        if !self.revoked.contains(&key_id) {
            self.revoked.push(key_id);
        }
    }
}

/// Simulated hardware attestation report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationQuote {
    #[serde(rename = "mrenclave_hex")]
    pub mrenclave: EnclaveMeasurement,
    pub tcb_status: TcbStatus,
    #[serde(rename = "report_data_hex")]
    pub report_data: Hash32,
    #[serde(rename = "platform_signature_b64")]
    pub platform_signature: SigBytes,
    /// Certificate wire bytes; kept opaque so signature checks cover the
    /// exact bytes received.
    #[serde(rename = "platform_cert_b64", with = "b64")]
    pub platform_cert: Vec<u8>,
}

impl AttestationQuote {
    /// The exact byte tuple the platform key signs:
    /// measurement (32) || tcb tag (1) || report data (32).
    pub fn signed_tuple(
        mrenclave: &EnclaveMeasurement,
        tcb_status: TcbStatus,
        report_data: &Hash32,
    ) -> Vec<u8> {
        let mut msg = Vec::with_capacity(65);
        msg.extend_from_slice(&mrenclave.0 .0);
        msg.push(tcb_status.tag());
        msg.extend_from_slice(&report_data.0);
        msg
    }

    pub fn parse_cert(&self) -> Result<PlatformCert, serde_json::Error> {
        from_json_bytes(&self.platform_cert)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuoteRejectReason {
    /// Certificate malformed or not signed by the pinned vendor root.
    BadCertChain,
    PlatformRevoked,
    BadPlatformSignature,
    TcbOutOfDate,
    TcbRevoked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuoteVerdict {
    Genuine,
    Rejected(QuoteRejectReason),
}

impl QuoteVerdict {
    pub fn is_genuine(&self) -> bool {
        matches!(self, QuoteVerdict::Genuine)
    }
}

/// Attestation-verification-service stand-in. Checks run in a fixed order
/// and the first failure wins: cert chain, revocation, platform signature,
/// TCB level.
pub fn verify_quote(quote: &AttestationQuote, anchor: &VendorTrustAnchor) -> QuoteVerdict {
    use QuoteRejectReason::*;

    let Ok(cert) = quote.parse_cert() else {
        return QuoteVerdict::Rejected(BadCertChain);
    };
    let cert_msg = PlatformCert::signing_message(&cert.platform_pubkey);
    if !anchor.vendor_root_pubkey.verify(&cert_msg, &cert.vendor_signature) {
        return QuoteVerdict::Rejected(BadCertChain);
    }
    if anchor.revoked.contains(&cert.key_id()) {
        return QuoteVerdict::Rejected(PlatformRevoked);
    }
    let tuple = AttestationQuote::signed_tuple(&quote.mrenclave, quote.tcb_status, &quote.report_data);
    if !cert.platform_pubkey.verify(&tuple, &quote.platform_signature) {
        return QuoteVerdict::Rejected(BadPlatformSignature);
    }
    match quote.tcb_status {
        TcbStatus::UpToDate => QuoteVerdict::Genuine,
        TcbStatus::OutOfDate => QuoteVerdict::Rejected(TcbOutOfDate),
        TcbStatus::Revoked => QuoteVerdict::Rejected(TcbRevoked),
    }
}
