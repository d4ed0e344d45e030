/* C ABI for offline verification of attested channel balance bundles. */

#ifndef HOTPROOF_H
#define HOTPROOF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status and verdict codes returned by every entry point.
typedef enum HpStatus {
  // Success; for verification calls, the proof was accepted.
  HP_OK = 0,
  // A required pointer argument was null.
  HP_ERR_NULL_ARG = 1,
  // A string argument was not valid UTF-8.
  HP_ERR_UTF8 = 2,
  // A JSON argument failed to parse.
  HP_ERR_PARSE = 3,
  // Liquidity estimation failed (unknown ids, no route, obstruction).
  HP_ERR_SIM = 4,
  // Unexpected internal failure.
  HP_ERR_INTERNAL = 5,
  // Proof rejected: transcript delivery checks failed.
  HP_REJECTED_DELIVERY = 10,
  // Proof rejected: hardware quote checks failed.
  HP_REJECTED_HARDWARE_QUOTE = 11,
  // Proof rejected: measurement or report binding checks failed.
  HP_REJECTED_SOFTWARE_BINDING = 12,
  // Proof rejected: freshness or nonce checks failed.
  HP_REJECTED_FRESHNESS = 13,
} HpStatus;

// Opaque auditor handle. Create with `hotproof_auditor_new`, release with
// `hotproof_auditor_free`.
typedef struct HpAuditor HpAuditor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates an auditor from an audit policy JSON document (the format
// produced by `hotproof policy`). On success writes the handle to `out`.
//
// # Safety
// `policy_json` must point to `policy_len` readable bytes; `out` must be a
// valid pointer.
enum HpStatus hotproof_auditor_new(const uint8_t *policy_json,
                                   size_t policy_len,
                                   struct HpAuditor **out);

// Releases an auditor handle. Passing null is a no-op.
//
// # Safety
// `auditor` must be null or a pointer from `hotproof_auditor_new` that has
// not been freed.
void hotproof_auditor_free(struct HpAuditor *auditor);

// Verifies a proof bundle (balance or threshold, dispatched by its `kind`
// field) at unix time `now`.
//
// `own_tip_json` optionally carries the caller's independent chain tip
// (`{"height":..,"block_hash":..,"timestamp":..}`); pass null to skip the
// tip cross-check. `expected_nonce` optionally pins the 32-byte challenge
// for threshold bundles; pass null to accept any embedded nonce.
//
// The verdict JSON is written to `verdict_out` whenever verification ran,
// including rejections; the return code then names the failed stage.
//
// # Safety
// Pointer arguments must be null or valid for their documented lengths;
// `verdict_out` must be a valid pointer.
enum HpStatus hotproof_verify_bundle(const struct HpAuditor *auditor,
                                     const uint8_t *bundle_json,
                                     size_t bundle_len,
                                     const uint8_t *own_tip_json,
                                     size_t own_tip_len,
                                     const uint8_t *expected_nonce,
                                     uint64_t now,
                                     char **verdict_out);

// Issues a fresh 32-byte challenge nonce and records it for one-time use
// by `hotproof_verify_direct`.
//
// # Safety
// `nonce_out` must point to 32 writable bytes.
enum HpStatus hotproof_issue_nonce(const struct HpAuditor *auditor, uint8_t *nonce_out);

// Verifies a direct attestation JSON document against a previously issued
// 32-byte nonce at unix time `now`. The nonce is consumed: a second call
// with the same nonce rejects at the freshness stage.
//
// # Safety
// Pointer arguments must be valid for their documented lengths;
// `expected_nonce` must point to 32 readable bytes.
enum HpStatus hotproof_verify_direct(const struct HpAuditor *auditor,
                                     const uint8_t *attestation_json,
                                     size_t attestation_len,
                                     const uint8_t *expected_nonce,
                                     uint64_t now,
                                     char **verdict_out);

// Estimates the liquidity of `target_channel` from `source` by binary-
// search payment probing over a graph fixture (JSON array of channels).
// Writes a `LiquidityEstimate` JSON document on success.
//
// # Safety
// `graph_json` must point to `graph_len` readable bytes; `source` and
// `target_channel` must be NUL-terminated strings; `estimate_out` must be
// a valid pointer.
enum HpStatus hotproof_estimate_liquidity(const uint8_t *graph_json,
                                          size_t graph_len,
                                          const char *source,
                                          const char *target_channel,
                                          uint64_t tolerance_sat,
                                          char **estimate_out);

// Releases a string returned by this library. Passing null is a no-op.
//
// # Safety
// `s` must be null or a pointer returned by this library that has not
// been freed.
void hotproof_string_free(char *s);

// Library version as a static NUL-terminated string; do not free.
const char *hotproof_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOTPROOF_H */
