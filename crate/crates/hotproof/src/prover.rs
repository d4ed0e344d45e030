//! The prover node: serves channel balances plainly and as enclave-attested
//! packages, and assembles notarized proof bundles.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::canonical::{from_json_bytes, to_wire_json, Blob, Hash32};
use crate::channel::{aggregate_balance_report, BalanceReport, ChannelState};
use crate::enclave::{DirectAttestation, EnclaveError, EnclaveHandle, EnclaveMeasurement, FreshnessEvidence};
use crate::keys::{Keypair, SigBytes};
use crate::oracle::OracleClient;
use crate::transcript::{
    record_session, reveal, NotaryService, ServerIdentity, SessionTranscript, TranscriptProof,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProverError {
    #[error("stale channel state: {0}")]
    StaleState(String),
    #[error("chain oracle unavailable: {0}")]
    OracleUnavailable(String),
    /// Threshold not met, deliberately indistinguishable from a refusal to
    /// answer.
    #[error("request refused")]
    Refused,
    #[error("notary unavailable: {0}")]
    NotaryUnavailable(String),
    #[error("{0}")]
    Internal(String),
}

impl From<EnclaveError> for ProverError {
    fn from(e: EnclaveError) -> Self {
        match e {
            EnclaveError::StaleState(outpoint) => ProverError::StaleState(outpoint.to_string()),
            EnclaveError::OracleUnavailable(detail) => ProverError::OracleUnavailable(detail),
            // No pinned key means freshness cannot be checked at all; the
            // endpoint degrades the same way as an unreachable oracle.
            EnclaveError::NoPinnedOracleKey => {
                ProverError::OracleUnavailable("no pinned oracle key".into())
            }
            EnclaveError::ThresholdNotMet => ProverError::Refused,
            other => ProverError::Internal(other.to_string()),
        }
    }
}

/// Time source: real for services, fixed for reproducible fixtures.
#[derive(Clone, Copy, Debug)]
pub enum Clock {
    System,
    Fixed(u64),
}

impl Clock {
    pub fn now(&self) -> u64 {
        match self {
            Clock::System => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .expect("system clock before epoch")
                .as_secs(),
            Clock::Fixed(t) => *t,
        }
    }
}

/// The attested package body: the quote plus its certificate chain and the
/// freshness evidence the quote binds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeeAttestationPayload {
    /// Quote wire bytes, base64.
    pub quote: Blob,
    pub cert_chain: Vec<Blob>,
    pub freshness: FreshnessEvidence,
}

/// What `/v1/attested/balance` serves: the plain balance report embedded
/// verbatim, plus the attestation payload binding it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationPackage {
    pub balance_report: BalanceReport,
    pub tee_attestation_payload: TeeAttestationPayload,
}

impl AttestationPackage {
    /// The exact bytes served, committed by transcripts and hashed by
    /// auditors.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        to_wire_json(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    Balance,
    Threshold,
}

/// Everything an auditor needs, offline: the notarized transcript proof and
/// the plaintext package bytes it vouches for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofBundle {
    pub kind: BundleKind,
    pub transcript_proof: TranscriptProof,
    #[serde(rename = "package_b64")]
    pub package: Blob,
}

impl ProofBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        to_wire_json(self)
    }

    pub fn load(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        from_json_bytes(bytes)
    }
}

pub const BALANCE_PATH: &str = "/v1/attested/balance";
pub const THRESHOLD_PATH: &str = "/v1/attested/threshold";

/// One running prover: a channel set, a loaded enclave, a server identity,
/// and an oracle connection. Requests snapshot the channel set; enclave
/// calls are serialized by the interior lock.
pub struct ProverNode {
    channels: Mutex<Vec<ChannelState>>,
    enclave: Mutex<EnclaveHandle>,
    server_keys: Keypair,
    server: ServerIdentity,
    oracle: Box<dyn OracleClient>,
    clock: Clock,
}

impl ProverNode {
    pub fn new(
        channels: Vec<ChannelState>,
        enclave: EnclaveHandle,
        server_keys: Keypair,
        subject: &str,
        oracle: Box<dyn OracleClient>,
        clock: Clock,
    ) -> Self {
        let server = ServerIdentity::derive(server_keys.public(), subject);
        ProverNode {
            channels: Mutex::new(channels),
            enclave: Mutex::new(enclave),
            server_keys,
            server,
            oracle,
            clock,
        }
    }

    pub fn server_identity(&self) -> ServerIdentity {
        self.server.clone()
    }

    pub fn measurement(&self) -> EnclaveMeasurement {
        self.enclave.lock().unwrap().measurement()
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn channel_snapshot(&self) -> Vec<ChannelState> {
        self.channels.lock().unwrap().clone()
    }

    /// Test and demo hook: applies a state transition to the channel set.
    pub fn update_channels<F>(&self, f: F) -> Result<(), ProverError>
    where
        F: FnOnce(&mut Vec<ChannelState>) -> Result<(), crate::channel::LnError>,
    {
        let mut channels = self.channels.lock().unwrap();
        f(&mut channels).map_err(|e| ProverError::Internal(e.to_string()))
    }

    /// GET /v1/balance/channels: the plain aggregate, canonical bytes.
    pub fn serve_channel_balance(&self) -> Result<Vec<u8>, ProverError> {
        let report = aggregate_balance_report(&self.channel_snapshot())
            .map_err(|e| ProverError::Internal(e.to_string()))?;
        Ok(report.canonical_bytes())
    }

    /// GET /v1/attested/balance: the full package, canonical bytes. Fails
    /// closed (no package at all) on stale state or oracle trouble.
    pub fn serve_attested_balance(&self) -> Result<Vec<u8>, ProverError> {
        let channels = self.channel_snapshot();
        let enclave = self.enclave.lock().unwrap();
        let attested = enclave.attest_balance(&channels, self.oracle.as_ref(), self.clock.now())?;
        let balance_report: BalanceReport = from_json_bytes(&attested.balance_report)
            .map_err(|e| ProverError::Internal(e.to_string()))?;
        let package = AttestationPackage {
            balance_report,
            tee_attestation_payload: TeeAttestationPayload {
                quote: Blob(to_wire_json(&attested.quote)),
                cert_chain: vec![Blob(attested.quote.platform_cert.clone())],
                freshness: attested.freshness,
            },
        };
        let bytes = package.canonical_bytes();
        // The embedded report must re-serialize to the exact bytes the
        // enclave hashed; the canonical serializer guarantees it.
        debug_assert_eq!(
            to_wire_json(&package.balance_report),
            attested.balance_report
        );
        Ok(bytes)
    }

    /// GET /v1/attested/threshold: threshold attestation bytes, or Refused
    /// with no signed artifact when the balance does not clear the bar.
    pub fn serve_attested_threshold(
        &self,
        threshold_sat: u64,
        nonce: &[u8],
    ) -> Result<Vec<u8>, ProverError> {
        let channels = self.channel_snapshot();
        let enclave = self.enclave.lock().unwrap();
        let attestation = enclave.attest_threshold(
            &channels,
            threshold_sat,
            nonce,
            self.oracle.as_ref(),
            self.clock.now(),
        )?;
        Ok(to_wire_json(&attestation))
    }

    /// POST /v1/direct: interactive variant against an auditor nonce.
    pub fn direct_attestation(&self, nonce: &[u8]) -> Result<DirectAttestation, ProverError> {
        let channels = self.channel_snapshot();
        let enclave = self.enclave.lock().unwrap();
        Ok(enclave.sign_direct(&channels, nonce, self.clock.now(), self.oracle.as_ref())?)
    }

    /// POST /v1/session/sign: the TLS stand-in. Signs a session commitment
    /// computed by the client over the bytes it received.
    pub fn sign_session(&self, request_path: &str, merkle_root: &Hash32, session_time: u64) -> SigBytes {
        let msg = crate::transcript::session_signing_message(
            &self.server.fingerprint,
            request_path,
            merkle_root,
            session_time,
        );
        self.server_keys.sign(&msg)
    }

    /// Records a served response as a signed session transcript.
    pub fn record_served_session(
        &self,
        request_path: &str,
        response: &[u8],
        session_time: u64,
    ) -> Result<SessionTranscript, ProverError> {
        record_session(
            &self.server_keys,
            &self.server.subject,
            request_path,
            response,
            session_time,
        )
        .map_err(|e| ProverError::Internal(e.to_string()))
    }
}

/// What to prove: the full balance package or a threshold claim.
#[derive(Clone, Debug)]
pub enum ProofRequest {
    Balance,
    Threshold { threshold_sat: u64, nonce: [u8; 32] },
}

impl ProofRequest {
    pub fn kind(&self) -> BundleKind {
        match self {
            ProofRequest::Balance => BundleKind::Balance,
            ProofRequest::Threshold { .. } => BundleKind::Threshold,
        }
    }

    pub fn request_path(&self) -> String {
        match self {
            ProofRequest::Balance => BALANCE_PATH.to_string(),
            ProofRequest::Threshold { threshold_sat, nonce } => format!(
                "{THRESHOLD_PATH}?threshold_sat={threshold_sat}&nonce={}",
                hex::encode(nonce)
            ),
        }
    }
}

/// In-process bundle assembly: fetch, record, notarize, reveal everything.
/// The HTTP flavor in the CLI performs the same steps over sockets.
pub fn build_proof_bundle_local(
    node: &ProverNode,
    notary: &NotaryService,
    request: &ProofRequest,
    notary_now: u64,
) -> Result<ProofBundle, ProverError> {
    let path = request.request_path();
    let bytes = match request {
        ProofRequest::Balance => node.serve_attested_balance()?,
        ProofRequest::Threshold { threshold_sat, nonce } => {
            node.serve_attested_threshold(*threshold_sat, nonce)?
        }
    };
    let transcript = node.record_served_session(&path, &bytes, node.now())?;
    let attestation = notary.notarize(
        transcript.commitment(),
        transcript.server.fingerprint,
        &path,
        notary_now,
    );
    let all: Vec<usize> = (0..transcript.records.len()).collect();
    let transcript_proof = reveal(&transcript, &attestation, &all)
        .map_err(|e| ProverError::Internal(e.to_string()))?;
    Ok(ProofBundle {
        kind: request.kind(),
        transcript_proof,
        package: Blob(bytes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelPhase, HtlcDirection, HtlcOutcome, Outpoint};
    use crate::enclave::{load_enclave, verify_quote, AttestationQuote, EnclavePolicy, TeeVendor};
    use crate::oracle::{ChainFixture, ChainOracle, FixtureUtxo};

    const NOW: u64 = 1_700_000_000;

    fn listing_channel() -> ChannelState {
        ChannelState::new(
            "chan-1",
            Outpoint::new(Hash32::of(b"funding-1"), 0),
            2_000_000,
            1_234_567_000,
            0,
            ChannelPhase::Open,
        )
        .unwrap()
    }

    fn harness(channels: Vec<ChannelState>) -> (ProverNode, ChainOracle, TeeVendor) {
        let fixture = ChainFixture {
            tip_height: 840_000,
            utxos: channels
                .iter()
                .map(|c| FixtureUtxo {
                    outpoint: c.funding_outpoint,
                    spent: false,
                })
                .collect(),
            base_timestamp: NOW,
        };
        let oracle = ChainOracle::new(Keypair::from_seed("oracle", 7), fixture.clone());
        let vendor = TeeVendor::new(Keypair::from_seed("vendor", 7));
        let enclave = load_enclave(
            &vendor,
            "lnd-enclave-v1.0-audited",
            EnclavePolicy {
                pinned_oracle_pubkey: Some(oracle.public_key()),
                ..EnclavePolicy::default()
            },
            7,
        );
        let node_oracle = ChainOracle::new(Keypair::from_seed("oracle", 7), fixture);
        let node = ProverNode::new(
            channels,
            enclave,
            Keypair::from_seed("server", 7),
            "prover.example",
            Box::new(node_oracle),
            Clock::Fixed(NOW),
        );
        (node, oracle, vendor)
    }

    #[test]
    fn plain_balance_endpoint_reproduces_reference_bytes() {
        let (node, _oracle, _vendor) = harness(vec![listing_channel()]);
        let bytes = node.serve_channel_balance().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("\"sat\": \"1234567\""));
        assert!(text.contains("\"msat\": \"1234567000\""));
        assert!(text.contains("\"sat\": \"765433\""));
        let report: BalanceReport = from_json_bytes(&bytes).unwrap();
        assert_eq!(report.canonical_bytes(), bytes);
    }

    #[test]
    fn settling_an_htlc_changes_the_served_bytes() {
        let (node, _oracle, _vendor) = harness(vec![listing_channel()]);
        let before = node.serve_channel_balance().unwrap();
        node.update_channels(|channels| {
            let with_htlc =
                channels[0].add_htlc(1_000, HtlcDirection::Received, Hash32::of(b"p"))?;
            let settled = with_htlc.resolve_htlc(0, HtlcOutcome::Settle)?;
            channels[0] = settled;
            Ok(())
        })
        .unwrap();
        let after = node.serve_channel_balance().unwrap();
        assert_ne!(before, after);
        let report: BalanceReport = from_json_bytes(&after).unwrap();
        assert_eq!(report.local_balance.msat, 1_234_568_000);
    }

    #[test]
    fn attested_package_binds_and_verifies() {
        let (node, _oracle, vendor) = harness(vec![listing_channel()]);
        let bytes = node.serve_attested_balance().unwrap();
        let package: AttestationPackage = from_json_bytes(&bytes).unwrap();
        let quote: AttestationQuote =
            from_json_bytes(&package.tee_attestation_payload.quote.0).unwrap();
        assert!(verify_quote(&quote, &vendor.trust_anchor()).is_genuine());
        let report_bytes = to_wire_json(&package.balance_report);
        assert_eq!(
            crate::enclave::binding_report_data(
                &report_bytes,
                &package.tee_attestation_payload.freshness
            ),
            quote.report_data
        );
        assert_eq!(package.tee_attestation_payload.cert_chain.len(), 1);
        assert_eq!(
            package.tee_attestation_payload.cert_chain[0].0,
            quote.platform_cert
        );
    }

    #[test]
    fn package_round_trips_to_identical_bytes() {
        let (node, _oracle, _vendor) = harness(vec![listing_channel()]);
        let bytes = node.serve_attested_balance().unwrap();
        let package: AttestationPackage = from_json_bytes(&bytes).unwrap();
        assert_eq!(package.canonical_bytes(), bytes);
    }

    fn harness_with_spent_funding() -> ProverNode {
        let channels = vec![listing_channel()];
        let fixture = ChainFixture {
            tip_height: 840_000,
            utxos: vec![FixtureUtxo {
                outpoint: channels[0].funding_outpoint,
                spent: true,
            }],
            base_timestamp: NOW,
        };
        let oracle = ChainOracle::new(Keypair::from_seed("oracle", 7), fixture);
        let vendor = TeeVendor::new(Keypair::from_seed("vendor", 7));
        let enclave = load_enclave(
            &vendor,
            "lnd-enclave-v1.0-audited",
            EnclavePolicy {
                pinned_oracle_pubkey: Some(oracle.public_key()),
                ..EnclavePolicy::default()
            },
            7,
        );
        ProverNode::new(
            channels,
            enclave,
            Keypair::from_seed("server", 7),
            "prover.example",
            Box::new(oracle),
            Clock::Fixed(NOW),
        )
    }

    #[test]
    fn spent_funding_fails_closed_but_plain_balance_still_serves() {
        let node = harness_with_spent_funding();
        assert!(matches!(
            node.serve_attested_balance(),
            Err(ProverError::StaleState(_))
        ));
        assert!(node.serve_channel_balance().is_ok());
    }

    #[test]
    fn offline_oracle_maps_to_unavailable() {
        let (node, _oracle, _vendor) = harness(vec![listing_channel()]);
        // The node owns its own oracle handle; rebuild one that is offline.
        let fixture = ChainFixture {
            tip_height: 840_000,
            utxos: vec![FixtureUtxo {
                outpoint: listing_channel().funding_outpoint,
                spent: false,
            }],
            base_timestamp: NOW,
        };
        let offline = ChainOracle::new(Keypair::from_seed("oracle", 7), fixture);
        offline.set_offline(true);
        let vendor = TeeVendor::new(Keypair::from_seed("vendor", 7));
        let enclave = load_enclave(
            &vendor,
            "lnd-enclave-v1.0-audited",
            EnclavePolicy {
                pinned_oracle_pubkey: Some(offline.public_key()),
                ..EnclavePolicy::default()
            },
            7,
        );
        let dark = ProverNode::new(
            vec![listing_channel()],
            enclave,
            Keypair::from_seed("server", 7),
            "prover.example",
            Box::new(offline),
            Clock::Fixed(NOW),
        );
        assert!(matches!(
            dark.serve_attested_balance(),
            Err(ProverError::OracleUnavailable(_))
        ));
        assert!(node.serve_attested_balance().is_ok());
    }

    #[test]
    fn threshold_refusal_carries_no_artifact() {
        let (node, _oracle, _vendor) = harness(vec![listing_channel()]);
        assert!(node.serve_attested_threshold(1_000_000, &[1u8; 32]).is_ok());
        assert_eq!(
            node.serve_attested_threshold(2_000_000, &[1u8; 32]).unwrap_err(),
            ProverError::Refused
        );
    }

    #[test]
    fn local_bundle_satisfies_its_own_invariant() {
        let (node, _oracle, _vendor) = harness(vec![listing_channel()]);
        let notary = NotaryService::new(Keypair::from_seed("notary", 7));
        let bundle =
            build_proof_bundle_local(&node, &notary, &ProofRequest::Balance, NOW + 5).unwrap();
        let rebuilt: Vec<u8> = bundle
            .transcript_proof
            .revealed
            .iter()
            .flat_map(|r| r.record.clone())
            .collect();
        assert_eq!(rebuilt, bundle.package.0);
        assert_eq!(bundle.kind, BundleKind::Balance);
        let reloaded = ProofBundle::load(&bundle.to_bytes()).unwrap();
        assert_eq!(reloaded, bundle);
    }
}
