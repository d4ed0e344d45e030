//! C ABI for embedding the auditor in non-Rust hosts.
//!
//! Conventions: every function returns an `HpStatus`; out-parameters are
//! written only on `HP_OK` unless documented otherwise; strings returned
//! through `char**` are NUL-terminated JSON owned by the caller and must be
//! released with `hotproof_string_free`.

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hotproof::auditor::{render_audit_record, AuditPolicy, AuditStage, AuditVerdict, Auditor};
use hotproof::canonical::from_json_bytes;
use hotproof::enclave::DirectAttestation;
use hotproof::netsim::NetworkGraph;
use hotproof::oracle::BlockTip;
use hotproof::prover::{BundleKind, ProofBundle};

/// Opaque auditor handle. Create with `hotproof_auditor_new`, release with
/// `hotproof_auditor_free`.
pub struct HpAuditor {
    inner: Auditor,
}

/// Status and verdict codes returned by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HpStatus {
    /// Success; for verification calls, the proof was accepted.
    HpOk = 0,
    /// A required pointer argument was null.
    HpErrNullArg = 1,
    /// A string argument was not valid UTF-8.
    HpErrUtf8 = 2,
    /// A JSON argument failed to parse.
    HpErrParse = 3,
    /// Liquidity estimation failed (unknown ids, no route, obstruction).
    HpErrSim = 4,
    /// Unexpected internal failure.
    HpErrInternal = 5,
    /// Proof rejected: transcript delivery checks failed.
    HpRejectedDelivery = 10,
    /// Proof rejected: hardware quote checks failed.
    HpRejectedHardwareQuote = 11,
    /// Proof rejected: measurement or report binding checks failed.
    HpRejectedSoftwareBinding = 12,
    /// Proof rejected: freshness or nonce checks failed.
    HpRejectedFreshness = 13,
}

fn status_of(verdict: &AuditVerdict) -> HpStatus {
    if verdict.accepted {
        return HpStatus::HpOk;
    }
    match verdict.stage {
        AuditStage::Delivery => HpStatus::HpRejectedDelivery,
        AuditStage::HardwareQuote => HpStatus::HpRejectedHardwareQuote,
        AuditStage::SoftwareBinding => HpStatus::HpRejectedSoftwareBinding,
        AuditStage::Freshness => HpStatus::HpRejectedFreshness,
        AuditStage::Accepted => HpStatus::HpErrInternal,
    }
}

unsafe fn slice_arg<'a>(ptr: *const u8, len: usize) -> Option<&'a [u8]> {
    if ptr.is_null() {
        None
    } else {
        Some(unsafe { std::slice::from_raw_parts(ptr, len) })
    }
}

fn write_json_out(out: *mut *mut c_char, bytes: Vec<u8>) -> HpStatus {
    let Ok(cstring) = CString::new(bytes) else {
        return HpStatus::HpErrInternal;
    };
    unsafe { *out = cstring.into_raw() };
    HpStatus::HpOk
}

fn emit_verdict(verdict: &AuditVerdict, out: *mut *mut c_char) -> HpStatus {
    if write_json_out(out, render_audit_record(verdict)) != HpStatus::HpOk {
        return HpStatus::HpErrInternal;
    }
    status_of(verdict)
}

fn guarded<F: FnOnce() -> HpStatus>(f: F) -> HpStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(HpStatus::HpErrInternal)
}

/// Creates an auditor from an audit policy JSON document (the format
/// produced by `hotproof policy`). On success writes the handle to `out`.
///
/// # Safety
/// `policy_json` must point to `policy_len` readable bytes; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hotproof_auditor_new(
    policy_json: *const u8,
    policy_len: usize,
    out: *mut *mut HpAuditor,
) -> HpStatus {
    guarded(|| {
        if out.is_null() {
            return HpStatus::HpErrNullArg;
        }
        let Some(bytes) = (unsafe { slice_arg(policy_json, policy_len) }) else {
            return HpStatus::HpErrNullArg;
        };
        let Ok(policy) = from_json_bytes::<AuditPolicy>(bytes) else {
            return HpStatus::HpErrParse;
        };
        let handle = Box::new(HpAuditor {
            inner: Auditor::new(policy),
        });
        unsafe { *out = Box::into_raw(handle) };
        HpStatus::HpOk
    })
}

/// Releases an auditor handle. Passing null is a no-op.
///
/// # Safety
/// `auditor` must be null or a pointer from `hotproof_auditor_new` that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn hotproof_auditor_free(auditor: *mut HpAuditor) {
    if !auditor.is_null() {
        drop(unsafe { Box::from_raw(auditor) });
    }
}

/// Verifies a proof bundle (balance or threshold, dispatched by its `kind`
/// field) at unix time `now`.
///
/// `own_tip_json` optionally carries the caller's independent chain tip
/// (`{"height":..,"block_hash":..,"timestamp":..}`); pass null to skip the
/// tip cross-check. `expected_nonce` optionally pins the 32-byte challenge
/// for threshold bundles; pass null to accept any embedded nonce.
///
/// The verdict JSON is written to `verdict_out` whenever verification ran,
/// including rejections; the return code then names the failed stage.
///
/// # Safety
/// Pointer arguments must be null or valid for their documented lengths;
/// `verdict_out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hotproof_verify_bundle(
    auditor: *const HpAuditor,
    bundle_json: *const u8,
    bundle_len: usize,
    own_tip_json: *const u8,
    own_tip_len: usize,
    expected_nonce: *const u8,
    now: u64,
    verdict_out: *mut *mut c_char,
) -> HpStatus {
    guarded(|| {
        if auditor.is_null() || verdict_out.is_null() {
            return HpStatus::HpErrNullArg;
        }
        let auditor = unsafe { &(*auditor).inner };
        let Some(bundle_bytes) = (unsafe { slice_arg(bundle_json, bundle_len) }) else {
            return HpStatus::HpErrNullArg;
        };
        let Ok(bundle) = ProofBundle::load(bundle_bytes) else {
            return HpStatus::HpErrParse;
        };
        let own_tip = match unsafe { slice_arg(own_tip_json, own_tip_len) } {
            Some(tip_bytes) => match from_json_bytes::<BlockTip>(tip_bytes) {
                Ok(tip) => Some(tip),
                Err(_) => return HpStatus::HpErrParse,
            },
            None => None,
        };
        let nonce = if expected_nonce.is_null() {
            None
        } else {
            let mut buf = [0u8; 32];
            buf.copy_from_slice(unsafe { std::slice::from_raw_parts(expected_nonce, 32) });
            Some(buf)
        };
        let verdict = match bundle.kind {
            BundleKind::Balance => auditor.verify_hot_proof(&bundle, own_tip.as_ref(), now),
            BundleKind::Threshold => {
                auditor.verify_threshold_proof(&bundle, own_tip.as_ref(), nonce.as_ref(), now)
            }
        };
        emit_verdict(&verdict, verdict_out)
    })
}

/// Issues a fresh 32-byte challenge nonce and records it for one-time use
/// by `hotproof_verify_direct`.
///
/// # Safety
/// `nonce_out` must point to 32 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hotproof_issue_nonce(
    auditor: *const HpAuditor,
    nonce_out: *mut u8,
) -> HpStatus {
    guarded(|| {
        if auditor.is_null() || nonce_out.is_null() {
            return HpStatus::HpErrNullArg;
        }
        let nonce = unsafe { &(*auditor).inner }.issue_nonce();
        unsafe { std::ptr::copy_nonoverlapping(nonce.as_ptr(), nonce_out, 32) };
        HpStatus::HpOk
    })
}

/// Verifies a direct attestation JSON document against a previously issued
/// 32-byte nonce at unix time `now`. The nonce is consumed: a second call
/// with the same nonce rejects at the freshness stage.
///
/// # Safety
/// Pointer arguments must be valid for their documented lengths;
/// `expected_nonce` must point to 32 readable bytes.
#[no_mangle]
pub unsafe extern "C" fn hotproof_verify_direct(
    auditor: *const HpAuditor,
    attestation_json: *const u8,
    attestation_len: usize,
    expected_nonce: *const u8,
    now: u64,
    verdict_out: *mut *mut c_char,
) -> HpStatus {
    guarded(|| {
        if auditor.is_null() || verdict_out.is_null() || expected_nonce.is_null() {
            return HpStatus::HpErrNullArg;
        }
        let auditor = unsafe { &(*auditor).inner };
        let Some(bytes) = (unsafe { slice_arg(attestation_json, attestation_len) }) else {
            return HpStatus::HpErrNullArg;
        };
        let Ok(attestation) = from_json_bytes::<DirectAttestation>(bytes) else {
            return HpStatus::HpErrParse;
        };
        let mut nonce = [0u8; 32];
        nonce.copy_from_slice(unsafe { std::slice::from_raw_parts(expected_nonce, 32) });
        let verdict = auditor.verify_direct(&attestation, &nonce, now);
        emit_verdict(&verdict, verdict_out)
    })
}

/// Estimates the liquidity of `target_channel` from `source` by binary-
/// search payment probing over a graph fixture (JSON array of channels).
/// Writes a `LiquidityEstimate` JSON document on success.
///
/// # Safety
/// `graph_json` must point to `graph_len` readable bytes; `source` and
/// `target_channel` must be NUL-terminated strings; `estimate_out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hotproof_estimate_liquidity(
    graph_json: *const u8,
    graph_len: usize,
    source: *const c_char,
    target_channel: *const c_char,
    tolerance_sat: u64,
    estimate_out: *mut *mut c_char,
) -> HpStatus {
    guarded(|| {
        if source.is_null() || target_channel.is_null() || estimate_out.is_null() {
            return HpStatus::HpErrNullArg;
        }
        let Some(graph_bytes) = (unsafe { slice_arg(graph_json, graph_len) }) else {
            return HpStatus::HpErrNullArg;
        };
        let (Ok(source), Ok(target)) = (
            unsafe { CStr::from_ptr(source) }.to_str(),
            unsafe { CStr::from_ptr(target_channel) }.to_str(),
        ) else {
            return HpStatus::HpErrUtf8;
        };
        let Ok(graph) = NetworkGraph::load(graph_bytes) else {
            return HpStatus::HpErrParse;
        };
        match graph.estimate_liquidity(source, target, tolerance_sat) {
            Ok(estimate) => {
                write_json_out(estimate_out, hotproof::canonical::to_wire_json(&estimate))
            }
            Err(_) => HpStatus::HpErrSim,
        }
    })
}

/// Releases a string returned by this library. Passing null is a no-op.
///
/// # Safety
/// `s` must be null or a pointer returned by this library that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn hotproof_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Library version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn hotproof_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
