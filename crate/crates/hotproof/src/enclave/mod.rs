//! Simulated TEE enclave: measurement, freshness-gated attestation, and
//! the direct-signing and threshold variants.
//!
//! The handle stands in for a loaded enclave. Its measurement covers both
//! the code identity string and the canonical policy bytes, so verifiers
//! that allowlist a measurement are implicitly allowlisting the policy the
//! enclave runs under (including the pinned oracle key).

pub mod quote;

use serde::{Deserialize, Serialize};

use crate::canonical::{b64, hex32, sha256, to_digest_json, Hash32};
use crate::channel::{aggregate_balance_report, Outpoint};
use crate::keys::{Keypair, PubKey, SigBytes};
use crate::oracle::{
    verify_statement, BlockTip, OracleClient, OracleError, OracleStatement, OutpointStatus,
    StatementPayload,
};

pub use quote::{
    verify_quote, AttestationQuote, EnclaveMeasurement, PlatformCert, QuoteRejectReason,
    QuoteVerdict, TcbStatus, TeeVendor, VendorTrustAnchor,
};

/// Configuration measured into the enclave identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnclavePolicy {
    /// Upper bound on in-flight HTLC value as a fraction of capacity.
    #[serde(default = "default_htlc_fraction")]
    pub max_pending_htlc_fraction: f64,
    #[serde(default)]
    pub tcb_status: TcbStatus,
    /// Chain oracle key the enclave trusts. Attestation fails closed when
    /// unset.
    #[serde(default)]
    pub pinned_oracle_pubkey: Option<PubKey>,
}

fn default_htlc_fraction() -> f64 {
    1.0
}

impl Default for EnclavePolicy {
    fn default() -> Self {
        EnclavePolicy {
            max_pending_htlc_fraction: 1.0,
            tcb_status: TcbStatus::UpToDate,
            pinned_oracle_pubkey: None,
        }
    }
}

impl EnclavePolicy {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        to_digest_json(self)
    }

    pub fn measurement(&self, code_identity: &str) -> EnclaveMeasurement {
        EnclaveMeasurement::compute(code_identity, &self.canonical_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnclaveError {
    #[error("policy has no pinned oracle key")]
    NoPinnedOracleKey,
    #[error("chain oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error("oracle statement failed verification: {0}")]
    BadOracleSignature(String),
    #[error("stale channel state: funding outpoint {0} is spent or unknown")]
    StaleState(Outpoint),
    #[error("HTLC policy violation: {0}")]
    HtlcPolicyViolation(String),
    #[error("nonce must be 32 bytes, got {0}")]
    BadNonceLength(usize),
    #[error("aggregate local balance does not exceed the threshold")]
    ThresholdNotMet,
    #[error(transparent)]
    Channel(#[from] crate::channel::LnError),
}

/// Chain-state evidence gathered inside the enclave before any attestation
/// is produced. All statements verify under the pinned oracle key and every
/// funding outpoint is unspent; otherwise no evidence exists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreshnessEvidence {
    pub tip: BlockTip,
    pub outpoint_statuses: Vec<OutpointStatus>,
    pub oracle_statements: Vec<OracleStatement>,
    pub checked_at: u64,
}

impl FreshnessEvidence {
    /// Hash of the canonical evidence bytes, bound into quote report data.
    pub fn digest(&self) -> Hash32 {
        Hash32::of(&to_digest_json(self))
    }
}

/// Balance report bytes plus the quote that binds them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestedPayload {
    #[serde(with = "b64")]
    pub balance_report: Vec<u8>,
    pub freshness: FreshnessEvidence,
    pub quote: AttestationQuote,
}

/// Balance report signed directly by the enclave report key, bound to a
/// verifier nonce and a timestamp.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectAttestation {
    #[serde(with = "b64")]
    pub balance_report: Vec<u8>,
    #[serde(with = "hex32")]
    pub nonce: [u8; 32],
    pub timestamp: u64,
    pub signature: SigBytes,
    pub enclave_report_pubkey: PubKey,
    /// Quote whose report data is the hash of the report public key,
    /// rooting that key in the measured enclave.
    pub binding_quote: AttestationQuote,
}

/// Attests `local balance > threshold_sat` without disclosing the balance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdAttestation {
    pub threshold_sat: u64,
    pub satisfied: bool,
    #[serde(with = "hex32")]
    pub nonce: [u8; 32],
    pub tip: BlockTip,
    pub quote: AttestationQuote,
}

/// report_data for balance attestation: H(report bytes || H(freshness)).
pub fn binding_report_data(report_bytes: &[u8], freshness: &FreshnessEvidence) -> Hash32 {
    let mut preimage = Vec::with_capacity(report_bytes.len() + 32);
    preimage.extend_from_slice(report_bytes);
    preimage.extend_from_slice(&freshness.digest().0);
    Hash32(sha256(&preimage))
}

/// report_data for the direct variant: H(report public key bytes).
pub fn binding_key_data(report_pubkey: &PubKey) -> Hash32 {
    Hash32::of(&report_pubkey.0)
}

/// The exact bytes signed by the direct variant:
/// u32 length || report bytes || nonce (32) || u64 timestamp, big-endian.
pub fn direct_signing_message(report_bytes: &[u8], nonce: &[u8; 32], timestamp: u64) -> Vec<u8> {
    let mut msg = Vec::with_capacity(4 + report_bytes.len() + 40);
    msg.extend_from_slice(&(report_bytes.len() as u32).to_be_bytes());
    msg.extend_from_slice(report_bytes);
    msg.extend_from_slice(nonce);
    msg.extend_from_slice(&timestamp.to_be_bytes());
    msg
}

#[derive(Serialize)]
struct ThresholdStatement {
    #[serde(with = "hex32")]
    nonce: [u8; 32],
    threshold_sat: u64,
    tip_hash: Hash32,
}

/// report_data for threshold attestation: hash of the canonical statement.
pub fn threshold_statement_hash(threshold_sat: u64, nonce: &[u8; 32], tip_hash: Hash32) -> Hash32 {
    let statement = ThresholdStatement {
        nonce: *nonce,
        threshold_sat,
        tip_hash,
    };
    Hash32::of(&to_digest_json(&statement))
}

/// A loaded enclave. Owns the report and platform keys; all attestation
/// goes through `&mut self` so operations on one handle are serialized.
pub struct EnclaveHandle {
    code_identity: String,
    policy: EnclavePolicy,
    measurement: EnclaveMeasurement,
    report_keys: Keypair,
    platform_keys: Keypair,
    platform_cert: PlatformCert,
}

/// Loads an enclave: measures the code identity and policy, and provisions
/// a vendor-certified platform key. `key_seed` determines the platform and
/// report keys, standing in for hardware key derivation.
pub fn load_enclave(
    vendor: &TeeVendor,
    code_identity: &str,
    policy: EnclavePolicy,
    key_seed: u64,
) -> EnclaveHandle {
    let platform_keys = Keypair::from_seed("platform", key_seed);
    let report_keys = Keypair::from_seed("enclave-report", key_seed);
    let platform_cert = vendor.issue_platform_cert(platform_keys.public());
    let measurement = policy.measurement(code_identity);
    EnclaveHandle {
        code_identity: code_identity.to_string(),
        policy,
        measurement,
        report_keys,
        platform_keys,
        platform_cert,
    }
}

impl EnclaveHandle {
    pub fn measurement(&self) -> EnclaveMeasurement {
        self.measurement
    }

    pub fn code_identity(&self) -> &str {
        &self.code_identity
    }

    pub fn policy(&self) -> &EnclavePolicy {
        &self.policy
    }

    pub fn report_pubkey(&self) -> PubKey {
        self.report_keys.public()
    }

    /// Emits a quote binding the given report data to this enclave's
    /// measurement and TCB status.
    pub fn generate_quote(&self, report_data: Hash32) -> AttestationQuote {
        let tuple =
            AttestationQuote::signed_tuple(&self.measurement, self.policy.tcb_status, &report_data);
        AttestationQuote {
            mrenclave: self.measurement,
            tcb_status: self.policy.tcb_status,
            report_data,
            platform_signature: self.platform_keys.sign(&tuple),
            platform_cert: self.platform_cert.to_bytes(),
        }
    }

    fn pinned_oracle_key(&self) -> Result<PubKey, EnclaveError> {
        self.policy
            .pinned_oracle_pubkey
            .ok_or(EnclaveError::NoPinnedOracleKey)
    }

    fn map_oracle_err(e: OracleError) -> EnclaveError {
        match e {
            OracleError::Unavailable(detail) => EnclaveError::OracleUnavailable(detail),
            other => EnclaveError::BadOracleSignature(other.to_string()),
        }
    }

    /// Verifies channel state against the chain: every funding outpoint must
    /// be unspent per oracle statements that check out under the pinned key,
    /// and in-flight HTLC totals must respect policy.
    pub fn check_freshness(
        &self,
        oracle: &dyn OracleClient,
        channels: &[crate::channel::ChannelState],
        now: u64,
    ) -> Result<FreshnessEvidence, EnclaveError> {
        let pinned = self.pinned_oracle_key()?;

        for channel in channels {
            if channel.phase == crate::channel::ChannelPhase::Closed {
                continue;
            }
            let offered: u128 = channel
                .htlcs
                .iter()
                .filter(|h| h.direction == crate::channel::HtlcDirection::Offered)
                .map(|h| h.amount_msat as u128)
                .sum();
            if offered > channel.local_msat as u128 {
                return Err(EnclaveError::HtlcPolicyViolation(format!(
                    "channel {}: offered HTLCs {} msat exceed local balance {} msat",
                    channel.channel_id, offered, channel.local_msat
                )));
            }
            let inflight: u128 = channel.htlcs.iter().map(|h| h.amount_msat as u128).sum();
            let limit =
                (self.policy.max_pending_htlc_fraction * (channel.capacity_sat as f64) * 1000.0) as u128;
            if inflight > limit {
                return Err(EnclaveError::HtlcPolicyViolation(format!(
                    "channel {}: in-flight {} msat exceeds {} of capacity",
                    channel.channel_id, inflight, self.policy.max_pending_htlc_fraction
                )));
            }
        }

        let mut statements = Vec::new();

        let tip_statement = oracle.fetch_tip().map_err(Self::map_oracle_err)?;
        let tip = match verify_statement(&tip_statement, &pinned).map_err(Self::map_oracle_err)? {
            StatementPayload::Tip { tip } => tip,
            StatementPayload::Outspend { .. } => {
                return Err(EnclaveError::BadOracleSignature(
                    "tip query answered with an outspend payload".into(),
                ))
            }
        };
        statements.push(tip_statement);

        let mut outpoint_statuses = Vec::new();
        for channel in channels {
            if channel.phase == crate::channel::ChannelPhase::Closed {
                continue;
            }
            let outpoint = channel.funding_outpoint;
            let statement = oracle.fetch_outspend(outpoint).map_err(Self::map_oracle_err)?;
            let payload = verify_statement(&statement, &pinned).map_err(Self::map_oracle_err)?;
            let StatementPayload::Outspend { status, .. } = payload else {
                return Err(EnclaveError::BadOracleSignature(
                    "outspend query answered with a tip payload".into(),
                ));
            };
            if status.outpoint != outpoint {
                return Err(EnclaveError::BadOracleSignature(format!(
                    "outspend statement answers {} instead of {}",
                    status.outpoint, outpoint
                )));
            }
            if !status.exists || status.spent {
                return Err(EnclaveError::StaleState(outpoint));
            }
            outpoint_statuses.push(status);
            statements.push(statement);
        }

        Ok(FreshnessEvidence {
            tip,
            outpoint_statuses,
            oracle_statements: statements,
            checked_at: now,
        })
    }

    /// Full balance attestation: aggregates the report, gates on freshness,
    /// and quotes H(report bytes || H(freshness)). Fails closed: any oracle
    /// or staleness problem means no quote of any kind is produced.
    pub fn attest_balance(
        &self,
        channels: &[crate::channel::ChannelState],
        oracle: &dyn OracleClient,
        now: u64,
    ) -> Result<AttestedPayload, EnclaveError> {
        let report = aggregate_balance_report(channels)?;
        let freshness = self.check_freshness(oracle, channels, now)?;
        let report_bytes = report.canonical_bytes();
        let quote = self.generate_quote(binding_report_data(&report_bytes, &freshness));
        Ok(AttestedPayload {
            balance_report: report_bytes,
            freshness,
            quote,
        })
    }

    /// Direct variant: signs (report || nonce || timestamp) with the report
    /// key and attaches a quote rooting that key in this enclave.
    pub fn sign_direct(
        &self,
        channels: &[crate::channel::ChannelState],
        nonce: &[u8],
        now: u64,
        oracle: &dyn OracleClient,
    ) -> Result<DirectAttestation, EnclaveError> {
        let nonce: [u8; 32] = nonce
            .try_into()
            .map_err(|_| EnclaveError::BadNonceLength(nonce.len()))?;
        let report = aggregate_balance_report(channels)?;
        self.check_freshness(oracle, channels, now)?;
        let report_bytes = report.canonical_bytes();
        let message = direct_signing_message(&report_bytes, &nonce, now);
        let signature = self.report_keys.sign(&message);
        let binding_quote = self.generate_quote(binding_key_data(&self.report_pubkey()));
        Ok(DirectAttestation {
            balance_report: report_bytes,
            nonce,
            timestamp: now,
            signature,
            enclave_report_pubkey: self.report_pubkey(),
            binding_quote,
        })
    }

    /// Threshold variant: emits an attestation iff the aggregate local
    /// balance strictly exceeds `threshold_sat`. The balance itself never
    /// appears in any output field, and no signed artifact of any kind is
    /// produced when the threshold is not met.
    pub fn attest_threshold(
        &self,
        channels: &[crate::channel::ChannelState],
        threshold_sat: u64,
        nonce: &[u8],
        oracle: &dyn OracleClient,
        now: u64,
    ) -> Result<ThresholdAttestation, EnclaveError> {
        let nonce: [u8; 32] = nonce
            .try_into()
            .map_err(|_| EnclaveError::BadNonceLength(nonce.len()))?;
        let report = aggregate_balance_report(channels)?;
        let freshness = self.check_freshness(oracle, channels, now)?;
        if report.local_balance.sat <= threshold_sat {
            return Err(EnclaveError::ThresholdNotMet);
        }
        let statement_hash = threshold_statement_hash(threshold_sat, &nonce, freshness.tip.block_hash);
        Ok(ThresholdAttestation {
            threshold_sat,
            satisfied: true,
            nonce,
            tip: freshness.tip,
            quote: self.generate_quote(statement_hash),
        })
    }
}
