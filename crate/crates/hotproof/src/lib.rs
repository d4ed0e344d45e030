//! Attested Lightning channel balance proofs, fully simulated at desk
//! scale.
//!
//! A prover node serves its channel balance report from inside a simulated
//! TEE enclave. The enclave gates every attestation on chain freshness
//! (signed statements from a mock block explorer) and binds the exact
//! report bytes into its quote. A notary co-signs a Merkle commitment over
//! the served session so third parties can verify offline who served the
//! bytes and when. The auditor checks the whole bundle in four stages and
//! never needs to talk to the prover.

pub mod auditor;
pub mod canonical;
pub mod channel;
pub mod cli;
pub mod enclave;
pub mod http;
pub mod keys;
pub mod netsim;
pub mod oracle;
pub mod prover;
pub mod transcript;
