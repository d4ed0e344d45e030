//! The auditor: verifies proof bundles offline in four fixed stages and
//! interactive direct attestations against issued nonces.

use std::collections::HashSet;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::canonical::{from_json_bytes, to_wire_json};
use crate::channel::BalanceReport;
use crate::enclave::{
    binding_key_data, binding_report_data, direct_signing_message, threshold_statement_hash,
    verify_quote, AttestationQuote, DirectAttestation, EnclaveMeasurement, ThresholdAttestation,
    VendorTrustAnchor,
};
use crate::keys::PubKey;
use crate::oracle::{verify_statement, BlockTip, StatementPayload};
use crate::prover::{AttestationPackage, BundleKind, ProofBundle, BALANCE_PATH, THRESHOLD_PATH};
use crate::transcript::{verify_transcript_proof, ProofVerdict, ServerIdentity};

pub const DEFAULT_MAX_PROOF_AGE_SECONDS: u64 = 300;
pub const DEFAULT_MAX_FRESHNESS_AGE_BLOCKS: u64 = 6;
pub const DEFAULT_DIRECT_WINDOW_SECONDS: u64 = 120;

/// Everything the auditor pins out of band: trusted code measurements, the
/// TEE vendor root, the notary key, the prover's server identity, and the
/// chain oracle key.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditPolicy {
    pub trusted_measurements: Vec<EnclaveMeasurement>,
    pub vendor_anchor: VendorTrustAnchor,
    pub notary_pubkey: PubKey,
    pub expected_server: ServerIdentity,
    pub pinned_oracle_key: PubKey,
    #[serde(default = "default_proof_age")]
    pub max_proof_age_seconds: u64,
    #[serde(default = "default_freshness_blocks")]
    pub max_freshness_age_blocks: u64,
    #[serde(default = "default_direct_window")]
    pub direct_window_seconds: u64,
}

fn default_proof_age() -> u64 {
    DEFAULT_MAX_PROOF_AGE_SECONDS
}

fn default_freshness_blocks() -> u64 {
    DEFAULT_MAX_FRESHNESS_AGE_BLOCKS
}

fn default_direct_window() -> u64 {
    DEFAULT_DIRECT_WINDOW_SECONDS
}

/// Verification stages, in the order they run. A rejection names the stage
/// that failed; later stages are never reached.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditStage {
    Delivery,
    HardwareQuote,
    SoftwareBinding,
    Freshness,
    Accepted,
}

impl AuditStage {
    pub fn exit_code(&self) -> i32 {
        match self {
            AuditStage::Accepted => 0,
            AuditStage::Delivery => 2,
            AuditStage::HardwareQuote => 3,
            AuditStage::SoftwareBinding => 4,
            AuditStage::Freshness => 5,
        }
    }
}

impl std::fmt::Display for AuditStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// The audit outcome: machine-readable, rendered deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub accepted: bool,
    pub stage: AuditStage,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub balance: Option<BalanceReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold_sat: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub notarized_time: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub measurement: Option<EnclaveMeasurement>,
}

impl AuditVerdict {
    fn reject(stage: AuditStage, reason: impl Into<String>) -> Self {
        AuditVerdict {
            accepted: false,
            stage,
            reason: reason.into(),
            balance: None,
            threshold_sat: None,
            notarized_time: None,
            measurement: None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.accepted {
            0
        } else {
            self.stage.exit_code()
        }
    }
}

/// Deterministic serialization of a verdict, for logs and exit plumbing.
pub fn render_audit_record(verdict: &AuditVerdict) -> Vec<u8> {
    to_wire_json(verdict)
}

/// An auditor instance. Holds the pinned policy and the registry of issued
/// direct-attestation nonces; each nonce is consumed on first use.
pub struct Auditor {
    policy: AuditPolicy,
    nonces: Mutex<HashSet<[u8; 32]>>,
}

impl Auditor {
    pub fn new(policy: AuditPolicy) -> Self {
        Auditor {
            policy,
            nonces: Mutex::new(HashSet::new()),
        }
    }

    pub fn policy(&self) -> &AuditPolicy {
        &self.policy
    }

    /// Fresh random nonce, recorded so a later direct attestation can be
    /// checked against it exactly once.
    pub fn issue_nonce(&self) -> [u8; 32] {
        use rand::RngCore;
        let mut nonce = [0u8; 32];
        rand::rng().fill_bytes(&mut nonce);
        self.nonces.lock().unwrap().insert(nonce);
        nonce
    }

    /// Test hook: registers a caller-chosen nonce.
    pub fn register_nonce(&self, nonce: [u8; 32]) {
        self.nonces.lock().unwrap().insert(nonce);
    }

    /// Stage (a): was this exact byte stream really served by the expected
    /// server and notarized in the acceptance window? Returns the package
    /// bytes reassembled from the revealed records.
    fn check_delivery(
        &self,
        bundle: &ProofBundle,
        expected_kind: BundleKind,
        now: u64,
    ) -> Result<(Vec<u8>, u64), AuditVerdict> {
        use AuditStage::Delivery;

        if bundle.kind != expected_kind {
            return Err(AuditVerdict::reject(
                Delivery,
                format!("WrongBundleKind: got {:?}, expected {expected_kind:?}", bundle.kind),
            ));
        }
        let verdict = verify_transcript_proof(
            &bundle.transcript_proof,
            &self.policy.notary_pubkey,
            &self.policy.expected_server,
            self.policy.max_proof_age_seconds,
            now,
        );
        let (revealed, notarized_time) = match verdict {
            ProofVerdict::Valid { revealed, notarized_time } => (revealed, notarized_time),
            ProofVerdict::Invalid(reason) => {
                return Err(AuditVerdict::reject(
                    Delivery,
                    format!("TranscriptRejected: {reason:?}"),
                ));
            }
        };
        let path = &bundle.transcript_proof.notary_attestation.request_path;
        let path_ok = match expected_kind {
            BundleKind::Balance => path == BALANCE_PATH,
            BundleKind::Threshold => path.starts_with(THRESHOLD_PATH),
        };
        if !path_ok {
            return Err(AuditVerdict::reject(
                Delivery,
                format!("WrongRequestPath: {path}"),
            ));
        }
        let count = bundle.transcript_proof.notary_attestation.commitment.record_count;
        let complete = revealed.len() == count as usize
            && revealed.iter().enumerate().all(|(i, (idx, _))| *idx == i as u32);
        if !complete {
            return Err(AuditVerdict::reject(
                Delivery,
                format!("IncompleteReveal: {} of {count} records opened", revealed.len()),
            ));
        }
        let rebuilt: Vec<u8> = revealed.into_iter().flat_map(|(_, bytes)| bytes).collect();
        if rebuilt != bundle.package.0 {
            return Err(AuditVerdict::reject(
                Delivery,
                "PackageMismatch: revealed records differ from package bytes",
            ));
        }
        Ok((rebuilt, notarized_time))
    }

    /// Stage (b): is the quote genuine under the pinned vendor root?
    fn check_quote(&self, quote: &AttestationQuote) -> Result<(), AuditVerdict> {
        let verdict = verify_quote(quote, &self.policy.vendor_anchor);
        match verdict {
            crate::enclave::QuoteVerdict::Genuine => Ok(()),
            crate::enclave::QuoteVerdict::Rejected(reason) => Err(AuditVerdict::reject(
                AuditStage::HardwareQuote,
                format!("QuoteInvalid: {reason:?}"),
            )),
        }
    }

    /// Stage (c1): is the measured code on the allowlist?
    fn check_measurement(&self, measurement: &EnclaveMeasurement) -> Result<(), AuditVerdict> {
        if self.policy.trusted_measurements.contains(measurement) {
            Ok(())
        } else {
            Err(AuditVerdict::reject(
                AuditStage::SoftwareBinding,
                format!("UnknownMeasurement: {measurement}"),
            ))
        }
    }

    /// Full offline audit of a balance proof bundle. `own_tip` is the
    /// auditor's independent chain view, if it has one.
    pub fn verify_hot_proof(
        &self,
        bundle: &ProofBundle,
        own_tip: Option<&BlockTip>,
        now: u64,
    ) -> AuditVerdict {
        use AuditStage::*;

        let (package_bytes, notarized_time) =
            match self.check_delivery(bundle, BundleKind::Balance, now) {
                Ok(v) => v,
                Err(verdict) => return verdict,
            };
        let package: AttestationPackage = match from_json_bytes(&package_bytes) {
            Ok(p) => p,
            Err(e) => {
                return AuditVerdict::reject(Delivery, format!("MalformedPackage: {e}"));
            }
        };

        let payload = &package.tee_attestation_payload;
        let quote: AttestationQuote = match from_json_bytes(&payload.quote.0) {
            Ok(q) => q,
            Err(e) => {
                return AuditVerdict::reject(HardwareQuote, format!("MalformedQuote: {e}"));
            }
        };
        if payload.cert_chain.is_empty() || payload.cert_chain[0].0 != quote.platform_cert {
            return AuditVerdict::reject(
                HardwareQuote,
                "CertChainMismatch: chain head differs from quote certificate",
            );
        }
        if let Err(v) = self.check_quote(&quote) {
            return v;
        }

        if let Err(v) = self.check_measurement(&quote.mrenclave) {
            return v;
        }
        let report_bytes = to_wire_json(&package.balance_report);
        if binding_report_data(&report_bytes, &payload.freshness) != quote.report_data {
            return AuditVerdict::reject(
                SoftwareBinding,
                "BindingMismatch: quote report data does not cover these bytes",
            );
        }
        if let Err(e) = package.balance_report.validate() {
            return AuditVerdict::reject(SoftwareBinding, format!("MalformedReport: {e}"));
        }

        // Stage (d): re-verify the oracle statements under the auditor's own
        // pinned key, then cross-check the evidence tip against the claims
        // and the auditor's chain view.
        let evidence = &payload.freshness;
        let mut tip_backed = false;
        let mut backed_statuses = Vec::new();
        for statement in &evidence.oracle_statements {
            match verify_statement(statement, &self.policy.pinned_oracle_key) {
                Ok(StatementPayload::Tip { tip }) => {
                    if tip == evidence.tip {
                        tip_backed = true;
                    }
                }
                Ok(StatementPayload::Outspend { tip, status }) => {
                    if tip == evidence.tip {
                        backed_statuses.push(status);
                    }
                }
                Err(e) => {
                    return AuditVerdict::reject(Freshness, format!("OracleStatement: {e}"));
                }
            }
        }
        if !tip_backed {
            return AuditVerdict::reject(
                Freshness,
                "TipUnverified: no signed statement matches the evidence tip",
            );
        }
        for claimed in &evidence.outpoint_statuses {
            let Some(backed) = backed_statuses.iter().find(|s| s.outpoint == claimed.outpoint)
            else {
                return AuditVerdict::reject(
                    Freshness,
                    format!("OutpointUnverified: {}", claimed.outpoint),
                );
            };
            if backed != claimed || !backed.exists || backed.spent {
                return AuditVerdict::reject(
                    Freshness,
                    format!("OutpointSpent: {}", claimed.outpoint),
                );
            }
        }
        if let Some(own) = own_tip {
            let lag = own.height.abs_diff(evidence.tip.height);
            if lag > self.policy.max_freshness_age_blocks {
                return AuditVerdict::reject(
                    Freshness,
                    format!(
                        "TipTooOld: evidence at height {}, auditor at {}",
                        evidence.tip.height, own.height
                    ),
                );
            }
        }

        AuditVerdict {
            accepted: true,
            stage: Accepted,
            reason: "all stages passed".into(),
            balance: Some(package.balance_report),
            threshold_sat: None,
            notarized_time: Some(notarized_time),
            measurement: Some(quote.mrenclave),
        }
    }

    /// Offline audit of a threshold proof bundle. Reveals whether the
    /// balance clears the stated bar and nothing else.
    pub fn verify_threshold_proof(
        &self,
        bundle: &ProofBundle,
        own_tip: Option<&BlockTip>,
        expected_nonce: Option<&[u8; 32]>,
        now: u64,
    ) -> AuditVerdict {
        use AuditStage::*;

        let (package_bytes, notarized_time) =
            match self.check_delivery(bundle, BundleKind::Threshold, now) {
                Ok(v) => v,
                Err(verdict) => return verdict,
            };
        let attestation: ThresholdAttestation = match from_json_bytes(&package_bytes) {
            Ok(a) => a,
            Err(e) => {
                return AuditVerdict::reject(Delivery, format!("MalformedPackage: {e}"));
            }
        };

        if let Err(v) = self.check_quote(&attestation.quote) {
            return v;
        }

        if let Err(v) = self.check_measurement(&attestation.quote.mrenclave) {
            return v;
        }
        let expected_data = threshold_statement_hash(
            attestation.threshold_sat,
            &attestation.nonce,
            attestation.tip.block_hash,
        );
        if expected_data != attestation.quote.report_data {
            return AuditVerdict::reject(
                SoftwareBinding,
                "BindingMismatch: quote report data does not cover this statement",
            );
        }
        if !attestation.satisfied {
            return AuditVerdict::reject(
                SoftwareBinding,
                "NotSatisfied: artifact marks the threshold as unmet",
            );
        }

        if let Some(expected) = expected_nonce {
            if &attestation.nonce != expected {
                return AuditVerdict::reject(
                    Freshness,
                    "NonceMismatch: attestation answers a different challenge",
                );
            }
        }
        if let Some(own) = own_tip {
            let lag = own.height.abs_diff(attestation.tip.height);
            if lag > self.policy.max_freshness_age_blocks {
                return AuditVerdict::reject(
                    Freshness,
                    format!(
                        "TipTooOld: attestation at height {}, auditor at {}",
                        attestation.tip.height, own.height
                    ),
                );
            }
        }

        AuditVerdict {
            accepted: true,
            stage: Accepted,
            reason: format!("balance exceeds {} sat", attestation.threshold_sat),
            balance: None,
            threshold_sat: Some(attestation.threshold_sat),
            notarized_time: Some(notarized_time),
            measurement: Some(attestation.quote.mrenclave),
        }
    }

    /// Interactive audit of a direct attestation. The expected nonce is
    /// consumed up front, so a second verification against the same nonce
    /// fails regardless of the attestation's own validity.
    pub fn verify_direct(
        &self,
        attestation: &DirectAttestation,
        expected_nonce: &[u8; 32],
        now: u64,
    ) -> AuditVerdict {
        use AuditStage::*;

        let nonce_live = self.nonces.lock().unwrap().remove(expected_nonce);

        if let Err(v) = self.check_quote(&attestation.binding_quote) {
            return v;
        }

        if let Err(v) = self.check_measurement(&attestation.binding_quote.mrenclave) {
            return v;
        }
        if binding_key_data(&attestation.enclave_report_pubkey)
            != attestation.binding_quote.report_data
        {
            return AuditVerdict::reject(
                SoftwareBinding,
                "BindingMismatch: quote does not root this report key",
            );
        }
        let msg = direct_signing_message(
            &attestation.balance_report,
            &attestation.nonce,
            attestation.timestamp,
        );
        if !attestation
            .enclave_report_pubkey
            .verify(&msg, &attestation.signature)
        {
            return AuditVerdict::reject(
                SoftwareBinding,
                "BadSignature: report signature check failed",
            );
        }
        let report: BalanceReport = match from_json_bytes(&attestation.balance_report) {
            Ok(r) => r,
            Err(e) => {
                return AuditVerdict::reject(SoftwareBinding, format!("MalformedReport: {e}"));
            }
        };

        if !nonce_live || &attestation.nonce != expected_nonce {
            return AuditVerdict::reject(
                Freshness,
                "NonceMismatch: nonce unknown, reused, or answers a different challenge",
            );
        }
        if now.abs_diff(attestation.timestamp) > self.policy.direct_window_seconds {
            return AuditVerdict::reject(
                Freshness,
                format!(
                    "Expired: signed at {}, checked at {now}, window {}s",
                    attestation.timestamp, self.policy.direct_window_seconds
                ),
            );
        }

        AuditVerdict {
            accepted: true,
            stage: Accepted,
            reason: "all stages passed".into(),
            balance: Some(report),
            threshold_sat: None,
            notarized_time: None,
            measurement: Some(attestation.binding_quote.mrenclave),
        }
    }
}
