//! Notarized session transcripts with selective record reveal.
//!
//! Stands in for an MPC-based TLS notarization stack: the server signs a
//! Merkle commitment over its response records, a notary co-signs the same
//! commitment with a timestamp, and the prover later reveals any subset of
//! records with inclusion paths. Verifiers learn who served the bytes and
//! when, and see nothing of unrevealed records.

pub mod merkle;

use serde::{Deserialize, Serialize};

use crate::canonical::{b64, sha256, to_digest_json, Hash32};
use crate::keys::{Keypair, PubKey, SigBytes};
use merkle::{merkle_path, merkle_root, verify_inclusion};

/// TLS-style record size: responses split into 16 KiB records, final
/// record ragged.
pub const RECORD_SIZE: usize = 16 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TranscriptError {
    #[error("response body is empty")]
    EmptyResponse,
    #[error("record index {index} out of range for {count} records")]
    IndexOutOfRange { index: usize, count: usize },
}

/// The serving endpoint's identity: signing key, hostname, and the
/// fingerprint H(cert_pubkey || subject) verifiers pin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerIdentity {
    pub subject: String,
    #[serde(rename = "cert_pubkey_b64")]
    pub cert_pubkey: PubKey,
    #[serde(rename = "fingerprint_hex")]
    pub fingerprint: Hash32,
}

impl ServerIdentity {
    pub fn derive(cert_pubkey: PubKey, subject: &str) -> Self {
        let mut preimage = Vec::with_capacity(32 + subject.len());
        preimage.extend_from_slice(&cert_pubkey.0);
        preimage.extend_from_slice(subject.as_bytes());
        ServerIdentity {
            subject: subject.to_string(),
            cert_pubkey,
            fingerprint: Hash32(sha256(&preimage)),
        }
    }

    /// True iff the fingerprint matches the key and subject it claims to
    /// summarize.
    pub fn is_internally_consistent(&self) -> bool {
        Self::derive(self.cert_pubkey, &self.subject).fingerprint == self.fingerprint
    }
}

/// One recorded HTTP session: the response records plus the server's
/// signature over their Merkle commitment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionTranscript {
    pub server: ServerIdentity,
    pub request_path: String,
    pub records: Vec<Vec<u8>>,
    pub session_time: u64,
    pub server_session_sig: SigBytes,
}

/// The byte tuple the server signs per session:
/// fingerprint (32) || u32 path length || path || merkle root (32) || u64 time.
pub fn session_signing_message(
    fingerprint: &Hash32,
    request_path: &str,
    root: &Hash32,
    session_time: u64,
) -> Vec<u8> {
    let mut msg = Vec::with_capacity(76 + request_path.len());
    msg.extend_from_slice(&fingerprint.0);
    msg.extend_from_slice(&(request_path.len() as u32).to_be_bytes());
    msg.extend_from_slice(request_path.as_bytes());
    msg.extend_from_slice(&root.0);
    msg.extend_from_slice(&session_time.to_be_bytes());
    msg
}

pub fn split_records(response: &[u8]) -> Vec<Vec<u8>> {
    response.chunks(RECORD_SIZE).map(<[u8]>::to_vec).collect()
}

impl SessionTranscript {
    /// Builds a transcript over pre-split records and signs the session.
    pub fn from_parts(
        server_keys: &Keypair,
        subject: &str,
        request_path: &str,
        records: Vec<Vec<u8>>,
        session_time: u64,
    ) -> Result<Self, TranscriptError> {
        if records.is_empty() {
            return Err(TranscriptError::EmptyResponse);
        }
        let server = ServerIdentity::derive(server_keys.public(), subject);
        let root = merkle_root(&records);
        let msg = session_signing_message(&server.fingerprint, request_path, &root, session_time);
        let server_session_sig = server_keys.sign(&msg);
        Ok(SessionTranscript {
            server,
            request_path: request_path.to_string(),
            records,
            session_time,
            server_session_sig,
        })
    }

    pub fn commitment(&self) -> TranscriptCommitment {
        commit_transcript(self)
    }

    pub fn response_bytes(&self) -> Vec<u8> {
        self.records.concat()
    }
}

/// Records a served response: splits it into records and signs the session.
pub fn record_session(
    server_keys: &Keypair,
    subject: &str,
    request_path: &str,
    response: &[u8],
    session_time: u64,
) -> Result<SessionTranscript, TranscriptError> {
    if response.is_empty() {
        return Err(TranscriptError::EmptyResponse);
    }
    SessionTranscript::from_parts(
        server_keys,
        subject,
        request_path,
        split_records(response),
        session_time,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptCommitment {
    #[serde(rename = "merkle_root_hex")]
    pub merkle_root: Hash32,
    pub record_count: u32,
}

/// Pure function of the record list.
pub fn commit_transcript(transcript: &SessionTranscript) -> TranscriptCommitment {
    TranscriptCommitment {
        merkle_root: merkle_root(&transcript.records),
        record_count: transcript.records.len() as u32,
    }
}

/// Notary's signed statement: this commitment, for this server and path,
/// existed at this time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotaryAttestation {
    pub commitment: TranscriptCommitment,
    #[serde(rename = "server_fingerprint_hex")]
    pub server_fingerprint: Hash32,
    pub request_path: String,
    pub notarized_time: u64,
    #[serde(rename = "notary_sig_b64")]
    pub notary_sig: SigBytes,
}

#[derive(Serialize)]
struct NotarySigningBody<'a> {
    commitment: &'a TranscriptCommitment,
    server_fingerprint: &'a Hash32,
    request_path: &'a str,
    notarized_time: u64,
}

/// Canonical bytes the notary signs: digest-form JSON of everything in the
/// attestation except the signature itself.
pub fn notary_signing_message(
    commitment: &TranscriptCommitment,
    server_fingerprint: &Hash32,
    request_path: &str,
    notarized_time: u64,
) -> Vec<u8> {
    to_digest_json(&NotarySigningBody {
        commitment,
        server_fingerprint,
        request_path,
        notarized_time,
    })
}

pub fn notarize(
    commitment: TranscriptCommitment,
    server_fingerprint: Hash32,
    request_path: &str,
    notary_keys: &Keypair,
    now: u64,
) -> NotaryAttestation {
    let msg = notary_signing_message(&commitment, &server_fingerprint, request_path, now);
    NotaryAttestation {
        commitment,
        server_fingerprint,
        request_path: request_path.to_string(),
        notarized_time: now,
        notary_sig: notary_keys.sign(&msg),
    }
}

pub fn verify_notary_attestation(attestation: &NotaryAttestation, notary_pubkey: &PubKey) -> bool {
    let msg = notary_signing_message(
        &attestation.commitment,
        &attestation.server_fingerprint,
        &attestation.request_path,
        attestation.notarized_time,
    );
    notary_pubkey.verify(&msg, &attestation.notary_sig)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealedRecord {
    pub index: u32,
    #[serde(rename = "record_b64", with = "b64")]
    pub record: Vec<u8>,
    pub path: Vec<Hash32>,
}

/// A notarized transcript with a chosen subset of records opened. This is
/// the only artifact that leaves the prover; unrevealed record bytes are
/// not present in any form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptProof {
    pub notary_attestation: NotaryAttestation,
    pub server: ServerIdentity,
    pub session_time: u64,
    #[serde(rename = "server_session_sig_b64")]
    pub server_session_sig: SigBytes,
    pub revealed: Vec<RevealedRecord>,
}

/// Opens the records at `indices` (deduplicated, ascending) under the given
/// notary attestation.
pub fn reveal(
    transcript: &SessionTranscript,
    attestation: &NotaryAttestation,
    indices: &[usize],
) -> Result<TranscriptProof, TranscriptError> {
    let count = transcript.records.len();
    let mut chosen: Vec<usize> = indices.to_vec();
    chosen.sort_unstable();
    chosen.dedup();
    let mut revealed = Vec::with_capacity(chosen.len());
    for index in chosen {
        if index >= count {
            return Err(TranscriptError::IndexOutOfRange { index, count });
        }
        revealed.push(RevealedRecord {
            index: index as u32,
            record: transcript.records[index].clone(),
            path: merkle_path(&transcript.records, index),
        });
    }
    Ok(TranscriptProof {
        notary_attestation: attestation.clone(),
        server: transcript.server.clone(),
        session_time: transcript.session_time,
        server_session_sig: transcript.server_session_sig.clone(),
        revealed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProofRejectReason {
    BadNotarySig,
    ServerMismatch,
    BadServerSig,
    BadMerklePath,
    Expired,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProofVerdict {
    Valid {
        revealed: Vec<(u32, Vec<u8>)>,
        notarized_time: u64,
    },
    Invalid(ProofRejectReason),
}

impl ProofVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, ProofVerdict::Valid { .. })
    }
}

/// Offline proof verification. Checks run in a fixed order and the first
/// failure wins: notary signature, server identity, server session
/// signature, Merkle inclusion of every revealed record, notarization age.
pub fn verify_transcript_proof(
    proof: &TranscriptProof,
    notary_pubkey: &PubKey,
    expected_server: &ServerIdentity,
    max_age_seconds: u64,
    now: u64,
) -> ProofVerdict {
    use ProofRejectReason::*;

    if !verify_notary_attestation(&proof.notary_attestation, notary_pubkey) {
        return ProofVerdict::Invalid(BadNotarySig);
    }
    if !proof.server.is_internally_consistent()
        || proof.server != *expected_server
        || proof.notary_attestation.server_fingerprint != expected_server.fingerprint
    {
        return ProofVerdict::Invalid(ServerMismatch);
    }
    let commitment = &proof.notary_attestation.commitment;
    let session_msg = session_signing_message(
        &proof.server.fingerprint,
        &proof.notary_attestation.request_path,
        &commitment.merkle_root,
        proof.session_time,
    );
    if !proof.server.cert_pubkey.verify(&session_msg, &proof.server_session_sig) {
        return ProofVerdict::Invalid(BadServerSig);
    }
    for revealed in &proof.revealed {
        let ok = verify_inclusion(
            &revealed.record,
            revealed.index as usize,
            &revealed.path,
            &commitment.merkle_root,
            commitment.record_count as usize,
        );
        if !ok {
            return ProofVerdict::Invalid(BadMerklePath);
        }
    }
    if now.saturating_sub(proof.notary_attestation.notarized_time) > max_age_seconds {
        return ProofVerdict::Invalid(Expired);
    }
    ProofVerdict::Valid {
        revealed: proof
            .revealed
            .iter()
            .map(|r| (r.index, r.record.clone()))
            .collect(),
        notarized_time: proof.notary_attestation.notarized_time,
    }
}

/// In-process notary: one signing key, attestations on demand.
pub struct NotaryService {
    keys: Keypair,
}

impl NotaryService {
    pub fn new(keys: Keypair) -> Self {
        NotaryService { keys }
    }

    pub fn public_key(&self) -> PubKey {
        self.keys.public()
    }

    pub fn notarize(
        &self,
        commitment: TranscriptCommitment,
        server_fingerprint: Hash32,
        request_path: &str,
        now: u64,
    ) -> NotaryAttestation {
        notarize(commitment, server_fingerprint, request_path, &self.keys, now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    const SESSION_TIME: u64 = 1_700_000_000;
    const NOTARY_TIME: u64 = 1_700_000_010;

    fn server_keys() -> Keypair {
        Keypair::from_seed("server", 7)
    }

    fn notary() -> NotaryService {
        NotaryService::new(Keypair::from_seed("notary", 7))
    }

    fn expected_server() -> ServerIdentity {
        ServerIdentity::derive(server_keys().public(), "prover.example")
    }

    /// High-entropy multi-record session so substring checks are meaningful.
    fn entropy_session(records: usize) -> (SessionTranscript, NotaryAttestation) {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let recs: Vec<Vec<u8>> = (0..records)
            .map(|_| {
                let mut r = vec![0u8; 64];
                rng.fill_bytes(&mut r);
                r
            })
            .collect();
        let transcript = SessionTranscript::from_parts(
            &server_keys(),
            "prover.example",
            "/v1/attested/balance",
            recs,
            SESSION_TIME,
        )
        .unwrap();
        let attestation = notary().notarize(
            transcript.commitment(),
            transcript.server.fingerprint,
            &transcript.request_path,
            NOTARY_TIME,
        );
        (transcript, attestation)
    }

    fn verify(proof: &TranscriptProof, now: u64) -> ProofVerdict {
        verify_transcript_proof(proof, &notary().public_key(), &expected_server(), 300, now)
    }

    #[test]
    fn split_rule_arithmetic() {
        assert_eq!(split_records(&[7u8]).len(), 1);
        assert_eq!(split_records(&vec![0u8; RECORD_SIZE]).len(), 1);
        assert_eq!(split_records(&vec![0u8; RECORD_SIZE + 1]).len(), 2);
        let ragged = split_records(&vec![0u8; 40_000]);
        assert_eq!(ragged.len(), 3);
        assert_eq!(ragged[2].len(), 40_000 - 2 * RECORD_SIZE);
        assert!(matches!(
            record_session(&server_keys(), "s", "/p", &[], SESSION_TIME),
            Err(TranscriptError::EmptyResponse)
        ));
    }

    #[test]
    fn session_signature_verifies_and_binds_the_root() {
        let transcript =
            record_session(&server_keys(), "prover.example", "/p", b"hello", SESSION_TIME).unwrap();
        let msg = session_signing_message(
            &transcript.server.fingerprint,
            "/p",
            &transcript.commitment().merkle_root,
            SESSION_TIME,
        );
        assert!(transcript.server.cert_pubkey.verify(&msg, &transcript.server_session_sig));
        let other_root = Hash32::of(b"other");
        let forged = session_signing_message(&transcript.server.fingerprint, "/p", &other_root, SESSION_TIME);
        assert!(!transcript.server.cert_pubkey.verify(&forged, &transcript.server_session_sig));
    }

    #[test]
    fn notary_attestation_round_trip_and_tamper() {
        let (transcript, attestation) = entropy_session(3);
        assert!(verify_notary_attestation(&attestation, &notary().public_key()));
        assert!(!verify_notary_attestation(
            &attestation,
            &Keypair::from_seed("notary", 8).public()
        ));
        let mut altered = attestation.clone();
        altered.notarized_time += 1;
        assert!(!verify_notary_attestation(&altered, &notary().public_key()));
        let mut altered = attestation;
        altered.commitment.record_count += 1;
        assert!(!verify_notary_attestation(&altered, &notary().public_key()));
        drop(transcript);
    }

    #[test]
    fn honest_full_reveal_reconstructs_the_response() {
        let response = b"a response body spanning several points".repeat(5);
        let transcript =
            record_session(&server_keys(), "prover.example", "/p", &response, SESSION_TIME).unwrap();
        let attestation = notary().notarize(
            transcript.commitment(),
            transcript.server.fingerprint,
            "/p",
            NOTARY_TIME,
        );
        let all: Vec<usize> = (0..transcript.records.len()).collect();
        let proof = reveal(&transcript, &attestation, &all).unwrap();
        let ProofVerdict::Valid { revealed, notarized_time } = verify(&proof, NOTARY_TIME + 10) else {
            panic!("expected valid proof");
        };
        assert_eq!(notarized_time, NOTARY_TIME);
        let rebuilt: Vec<u8> = revealed.into_iter().flat_map(|(_, bytes)| bytes).collect();
        assert_eq!(rebuilt, response);
    }

    #[test]
    fn empty_reveal_still_proves_a_session_happened() {
        let (transcript, attestation) = entropy_session(3);
        let proof = reveal(&transcript, &attestation, &[]).unwrap();
        let verdict = verify(&proof, NOTARY_TIME + 10);
        let ProofVerdict::Valid { revealed, .. } = verdict else {
            panic!("expected valid proof");
        };
        assert!(revealed.is_empty());
    }

    #[test]
    fn serialized_proof_omits_unrevealed_record_bytes() {
        let (transcript, attestation) = entropy_session(3);
        let proof = reveal(&transcript, &attestation, &[1]).unwrap();
        let text = String::from_utf8(crate::canonical::to_wire_json(&proof)).unwrap();
        assert!(text.contains(&b64::encode(&transcript.records[1])));
        for hidden in [0, 2] {
            assert!(
                !text.contains(&b64::encode(&transcript.records[hidden])),
                "record {hidden} leaked into the serialized proof"
            );
            assert!(!text.contains(&hex::encode(&transcript.records[hidden])));
        }
    }

    #[test]
    fn reveal_rejects_out_of_range_indices() {
        let (transcript, attestation) = entropy_session(2);
        assert_eq!(
            reveal(&transcript, &attestation, &[2]).unwrap_err(),
            TranscriptError::IndexOutOfRange { index: 2, count: 2 }
        );
    }

    #[test]
    fn stale_proof_expires() {
        let (transcript, attestation) = entropy_session(2);
        let proof = reveal(&transcript, &attestation, &[0]).unwrap();
        assert!(verify(&proof, NOTARY_TIME + 300).is_valid());
        assert_eq!(
            verify(&proof, NOTARY_TIME + 301),
            ProofVerdict::Invalid(ProofRejectReason::Expired)
        );
    }

    #[test]
    fn retargeted_server_identity_is_a_mismatch() {
        let (transcript, attestation) = entropy_session(2);
        let proof = reveal(&transcript, &attestation, &[0]).unwrap();
        let other = ServerIdentity::derive(Keypair::from_seed("server", 8).public(), "prover.example");
        assert_eq!(
            verify_transcript_proof(&proof, &notary().public_key(), &other, 300, NOTARY_TIME + 1),
            ProofVerdict::Invalid(ProofRejectReason::ServerMismatch)
        );
        let mut inconsistent = proof;
        inconsistent.server.subject = "evil.example".into();
        assert_eq!(
            verify(&inconsistent, NOTARY_TIME + 1),
            ProofVerdict::Invalid(ProofRejectReason::ServerMismatch)
        );
    }

    #[test]
    fn tampered_session_signature_is_caught() {
        let (transcript, attestation) = entropy_session(2);
        let mut proof = reveal(&transcript, &attestation, &[0]).unwrap();
        proof.server_session_sig.0[5] ^= 0x01;
        assert_eq!(
            verify(&proof, NOTARY_TIME + 1),
            ProofVerdict::Invalid(ProofRejectReason::BadServerSig)
        );
    }

    #[test]
    fn record_index_or_path_mutations_break_exactly_that_record() {
        let (transcript, attestation) = entropy_session(3);
        let honest = reveal(&transcript, &attestation, &[0, 1, 2]).unwrap();
        assert!(verify(&honest, NOTARY_TIME + 1).is_valid());

        let mut bytes_flip = honest.clone();
        bytes_flip.revealed[1].record[0] ^= 0x01;
        assert_eq!(
            verify(&bytes_flip, NOTARY_TIME + 1),
            ProofVerdict::Invalid(ProofRejectReason::BadMerklePath)
        );

        let mut index_swap = honest.clone();
        index_swap.revealed[1].index = 2;
        assert_eq!(
            verify(&index_swap, NOTARY_TIME + 1),
            ProofVerdict::Invalid(ProofRejectReason::BadMerklePath)
        );

        let mut path_flip = honest;
        path_flip.revealed[2].path[0].0[0] ^= 0x01;
        assert_eq!(
            verify(&path_flip, NOTARY_TIME + 1),
            ProofVerdict::Invalid(ProofRejectReason::BadMerklePath)
        );
    }

    #[test]
    fn first_failing_check_wins() {
        let (transcript, attestation) = entropy_session(2);
        // Both the notary signature and the age are bad; the notary
        // signature is reported because it is checked first.
        let mut proof = reveal(&transcript, &attestation, &[0]).unwrap();
        proof.notary_attestation.notary_sig.0[0] ^= 0x01;
        assert_eq!(
            verify(&proof, NOTARY_TIME + 10_000),
            ProofVerdict::Invalid(ProofRejectReason::BadNotarySig)
        );

        // Bad server signature and bad Merkle path: server signature first.
        let mut proof = reveal(&transcript, &attestation, &[0]).unwrap();
        proof.server_session_sig.0[0] ^= 0x01;
        proof.revealed[0].record.push(0);
        assert_eq!(
            verify(&proof, NOTARY_TIME + 1),
            ProofVerdict::Invalid(ProofRejectReason::BadServerSig)
        );
    }

    #[test]
    fn proof_survives_json_round_trip() {
        let (transcript, attestation) = entropy_session(3);
        let proof = reveal(&transcript, &attestation, &[0, 2]).unwrap();
        let bytes = crate::canonical::to_wire_json(&proof);
        let back: TranscriptProof = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, proof);
        assert!(verify(&back, NOTARY_TIME + 1).is_valid());
    }

    mod properties {
        use super::*;
        use proptest::collection::vec;
        use proptest::prelude::*;

        proptest! {
            /// An attestation for one session can never vouch for records
            /// of a different session.
            #[test]
            fn cross_paired_sessions_never_validate(
                recs_a in vec(vec(any::<u8>(), 0..40), 1..5),
                recs_b in vec(vec(any::<u8>(), 0..40), 1..5),
            ) {
                prop_assume!(merkle::merkle_root(&recs_a) != merkle::merkle_root(&recs_b));
                let keys = server_keys();
                let ta = SessionTranscript::from_parts(&keys, "prover.example", "/p", recs_a, SESSION_TIME).unwrap();
                let tb = SessionTranscript::from_parts(&keys, "prover.example", "/p", recs_b, SESSION_TIME).unwrap();
                let attestation_a = notary().notarize(ta.commitment(), ta.server.fingerprint, "/p", NOTARY_TIME);
                // Transplant: session A's attestation and session signature
                // glued onto session B's records and paths.
                let mut transplanted = reveal(&tb, &attestation_a, &(0..tb.records.len()).collect::<Vec<_>>()).unwrap();
                transplanted.server_session_sig = ta.server_session_sig.clone();
                transplanted.session_time = ta.session_time;
                let verdict = verify_transcript_proof(
                    &transplanted,
                    &notary().public_key(),
                    &ta.server,
                    300,
                    NOTARY_TIME + 1,
                );
                prop_assert!(!verdict.is_valid());
            }

            /// Every honestly revealed subset verifies.
            #[test]
            fn honest_subsets_always_verify(
                recs in vec(vec(any::<u8>(), 0..40), 1..6),
                subset_mask in any::<u8>(),
            ) {
                let keys = server_keys();
                let t = SessionTranscript::from_parts(&keys, "prover.example", "/p", recs, SESSION_TIME).unwrap();
                let attestation = notary().notarize(t.commitment(), t.server.fingerprint, "/p", NOTARY_TIME);
                let indices: Vec<usize> = (0..t.records.len())
                    .filter(|i| subset_mask & (1 << (i % 8)) != 0)
                    .collect();
                let proof = reveal(&t, &attestation, &indices).unwrap();
                let verdict = verify_transcript_proof(
                    &proof,
                    &notary().public_key(),
                    &t.server,
                    300,
                    NOTARY_TIME + 1,
                );
                prop_assert!(verdict.is_valid());
            }
        }
    }
}
