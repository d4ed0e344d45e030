//! Exercises the C entry points exactly as a foreign host would: JSON in,
//! status codes and owned strings out.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use hotproof::auditor::{
    AuditPolicy, DEFAULT_DIRECT_WINDOW_SECONDS, DEFAULT_MAX_FRESHNESS_AGE_BLOCKS,
    DEFAULT_MAX_PROOF_AGE_SECONDS,
};
use hotproof::canonical::{to_wire_json, Hash32};
use hotproof::channel::{ChannelPhase, ChannelState, Outpoint};
use hotproof::enclave::{load_enclave, EnclavePolicy, TeeVendor};
use hotproof::keys::Keypair;
use hotproof::oracle::{ChainFixture, ChainOracle, FixtureUtxo};
use hotproof::prover::{build_proof_bundle_local, Clock, ProofRequest, ProverNode};
use hotproof::transcript::NotaryService;

use hotproof_ffi::{
    hotproof_auditor_free, hotproof_auditor_new, hotproof_estimate_liquidity,
    hotproof_issue_nonce, hotproof_string_free, hotproof_verify_bundle, hotproof_verify_direct,
    hotproof_version, HpAuditor, HpStatus,
};

const NOW: u64 = 1_700_000_000;

struct Harness {
    node: ProverNode,
    notary: NotaryService,
    policy_json: Vec<u8>,
    tip_json: Vec<u8>,
}

fn harness() -> Harness {
    let channels = vec![ChannelState::new(
        "chan-1",
        Outpoint::new(Hash32::of(b"funding-1"), 0),
        2_000_000,
        1_234_567_000,
        0,
        ChannelPhase::Open,
    )
    .unwrap()];
    let fixture = ChainFixture {
        tip_height: 840_000,
        utxos: vec![FixtureUtxo {
            outpoint: channels[0].funding_outpoint,
            spent: false,
        }],
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
    let measurement = enclave.measurement();
    let tip_json = to_wire_json(&oracle.tip_snapshot());
    let node = ProverNode::new(
        channels,
        enclave,
        Keypair::from_seed("server", 7),
        "prover.example",
        Box::new(ChainOracle::new(Keypair::from_seed("oracle", 7), fixture)),
        Clock::Fixed(NOW),
    );
    let notary = NotaryService::new(Keypair::from_seed("notary", 7));
    let policy = AuditPolicy {
        trusted_measurements: vec![measurement],
        vendor_anchor: vendor.trust_anchor(),
        notary_pubkey: notary.public_key(),
        expected_server: node.server_identity(),
        pinned_oracle_key: oracle.public_key(),
        max_proof_age_seconds: DEFAULT_MAX_PROOF_AGE_SECONDS,
        max_freshness_age_blocks: DEFAULT_MAX_FRESHNESS_AGE_BLOCKS,
        direct_window_seconds: DEFAULT_DIRECT_WINDOW_SECONDS,
    };
    Harness {
        node,
        notary,
        policy_json: to_wire_json(&policy),
        tip_json,
    }
}

fn new_auditor(policy_json: &[u8]) -> *mut HpAuditor {
    let mut handle: *mut HpAuditor = ptr::null_mut();
    let status =
        unsafe { hotproof_auditor_new(policy_json.as_ptr(), policy_json.len(), &mut handle) };
    assert_eq!(status, HpStatus::HpOk);
    assert!(!handle.is_null());
    handle
}

fn take_string(ptr: *mut c_char) -> String {
    assert!(!ptr.is_null());
    let text = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_string();
    unsafe { hotproof_string_free(ptr) };
    text
}

#[test]
fn version_is_a_static_semver_string() {
    let version = unsafe { CStr::from_ptr(hotproof_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn bundle_verification_round_trips_through_the_c_abi() {
    let h = harness();
    let bundle =
        build_proof_bundle_local(&h.node, &h.notary, &ProofRequest::Balance, NOW + 5).unwrap();
    let bundle_json = bundle.to_bytes();
    let auditor = new_auditor(&h.policy_json);

    let mut verdict: *mut c_char = ptr::null_mut();
    let status = unsafe {
        hotproof_verify_bundle(
            auditor,
            bundle_json.as_ptr(),
            bundle_json.len(),
            h.tip_json.as_ptr(),
            h.tip_json.len(),
            ptr::null(),
            NOW + 10,
            &mut verdict,
        )
    };
    assert_eq!(status, HpStatus::HpOk);
    let text = take_string(verdict);
    assert!(text.contains("\"accepted\": true"));
    assert!(text.contains("\"1234567\""));

    unsafe { hotproof_auditor_free(auditor) };
}

#[test]
fn tampered_bundle_maps_to_the_stage_code() {
    let h = harness();
    let mut bundle =
        build_proof_bundle_local(&h.node, &h.notary, &ProofRequest::Balance, NOW + 5).unwrap();
    bundle.transcript_proof.notary_attestation.notary_sig.0[0] ^= 1;
    let bundle_json = bundle.to_bytes();
    let auditor = new_auditor(&h.policy_json);

    let mut verdict: *mut c_char = ptr::null_mut();
    let status = unsafe {
        hotproof_verify_bundle(
            auditor,
            bundle_json.as_ptr(),
            bundle_json.len(),
            ptr::null(),
            0,
            ptr::null(),
            NOW + 10,
            &mut verdict,
        )
    };
    assert_eq!(status, HpStatus::HpRejectedDelivery);
    let text = take_string(verdict);
    assert!(text.contains("\"accepted\": false"));
    assert!(text.contains("BadNotarySig"));

    unsafe { hotproof_auditor_free(auditor) };
}

#[test]
fn threshold_bundle_with_pinned_nonce_verifies() {
    let h = harness();
    let nonce = [9u8; 32];
    let bundle = build_proof_bundle_local(
        &h.node,
        &h.notary,
        &ProofRequest::Threshold {
            threshold_sat: 1_000_000,
            nonce,
        },
        NOW + 5,
    )
    .unwrap();
    let bundle_json = bundle.to_bytes();
    let auditor = new_auditor(&h.policy_json);

    let mut verdict: *mut c_char = ptr::null_mut();
    let status = unsafe {
        hotproof_verify_bundle(
            auditor,
            bundle_json.as_ptr(),
            bundle_json.len(),
            ptr::null(),
            0,
            nonce.as_ptr(),
            NOW + 10,
            &mut verdict,
        )
    };
    assert_eq!(status, HpStatus::HpOk);
    take_string(verdict);

    let wrong = [8u8; 32];
    let mut verdict: *mut c_char = ptr::null_mut();
    let status = unsafe {
        hotproof_verify_bundle(
            auditor,
            bundle_json.as_ptr(),
            bundle_json.len(),
            ptr::null(),
            0,
            wrong.as_ptr(),
            NOW + 10,
            &mut verdict,
        )
    };
    assert_eq!(status, HpStatus::HpRejectedFreshness);
    take_string(verdict);

    unsafe { hotproof_auditor_free(auditor) };
}

#[test]
fn direct_flow_consumes_the_issued_nonce() {
    let h = harness();
    let auditor = new_auditor(&h.policy_json);

    let mut nonce = [0u8; 32];
    let status = unsafe { hotproof_issue_nonce(auditor, nonce.as_mut_ptr()) };
    assert_eq!(status, HpStatus::HpOk);
    assert_ne!(nonce, [0u8; 32]);

    let attestation = h.node.direct_attestation(&nonce).unwrap();
    let attestation_json = to_wire_json(&attestation);

    let mut verdict: *mut c_char = ptr::null_mut();
    let status = unsafe {
        hotproof_verify_direct(
            auditor,
            attestation_json.as_ptr(),
            attestation_json.len(),
            nonce.as_ptr(),
            NOW + 10,
            &mut verdict,
        )
    };
    assert_eq!(status, HpStatus::HpOk);
    assert!(take_string(verdict).contains("\"accepted\": true"));

    let mut verdict: *mut c_char = ptr::null_mut();
    let status = unsafe {
        hotproof_verify_direct(
            auditor,
            attestation_json.as_ptr(),
            attestation_json.len(),
            nonce.as_ptr(),
            NOW + 10,
            &mut verdict,
        )
    };
    assert_eq!(status, HpStatus::HpRejectedFreshness);
    assert!(take_string(verdict).contains("NonceMismatch"));

    unsafe { hotproof_auditor_free(auditor) };
}

#[test]
fn null_and_malformed_arguments_are_reported_not_crashed() {
    let mut handle: *mut HpAuditor = ptr::null_mut();
    let status = unsafe { hotproof_auditor_new(ptr::null(), 0, &mut handle) };
    assert_eq!(status, HpStatus::HpErrNullArg);

    let status = unsafe { hotproof_auditor_new(b"not json".as_ptr(), 8, &mut handle) };
    assert_eq!(status, HpStatus::HpErrParse);

    let h = harness();
    let auditor = new_auditor(&h.policy_json);
    let mut verdict: *mut c_char = ptr::null_mut();
    let status = unsafe {
        hotproof_verify_bundle(
            auditor,
            b"{}".as_ptr(),
            2,
            ptr::null(),
            0,
            ptr::null(),
            NOW,
            &mut verdict,
        )
    };
    assert_eq!(status, HpStatus::HpErrParse);
    assert!(verdict.is_null());

    unsafe { hotproof_string_free(ptr::null_mut()) };
    unsafe { hotproof_auditor_free(ptr::null_mut()) };
    unsafe { hotproof_auditor_free(auditor) };
}

#[test]
fn liquidity_estimation_runs_from_a_graph_fixture() {
    let graph_json = br#"[
        {"id": "entry", "a": "A", "b": "H", "capacity_sat": 10000000, "local_sat_of_a": 10000000},
        {"id": "target", "a": "H", "b": "S", "capacity_sat": 1000000, "local_sat_of_a": 637102}
    ]"#;
    let source = CString::new("A").unwrap();
    let target = CString::new("target").unwrap();
    let mut estimate: *mut c_char = ptr::null_mut();
    let status = unsafe {
        hotproof_estimate_liquidity(
            graph_json.as_ptr(),
            graph_json.len(),
            source.as_ptr(),
            target.as_ptr(),
            1,
            &mut estimate,
        )
    };
    assert_eq!(status, HpStatus::HpOk);
    let text = take_string(estimate);
    assert!(text.contains("\"lower_bound_sat\": 637102"), "{text}");
    assert!(text.contains("\"upper_bound_sat\": 637102"), "{text}");

    let missing = CString::new("nope").unwrap();
    let mut estimate: *mut c_char = ptr::null_mut();
    let status = unsafe {
        hotproof_estimate_liquidity(
            graph_json.as_ptr(),
            graph_json.len(),
            source.as_ptr(),
            missing.as_ptr(),
            1,
            &mut estimate,
        )
    };
    assert_eq!(status, HpStatus::HpErrSim);
    assert!(estimate.is_null());
}
