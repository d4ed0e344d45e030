//! Mock block explorer issuing signed chain statements.
//!
//! The oracle plays the role of an Esplora-style HTTP API whose responses
//! are signed so an enclave can verify them offline against a pinned key.
//! State is a fixture: a tip height plus a UTXO set, with admin hooks to
//! advance blocks, spend outputs, and simulate outages.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::canonical::{b64, from_json_bytes, sha256, to_digest_json, to_wire_json, Hash32};
use crate::channel::Outpoint;
use crate::keys::{Keypair, PubKey, SigBytes};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTip {
    pub height: u64,
    pub block_hash: Hash32,
    pub timestamp: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutpointStatus {
    pub outpoint: Outpoint,
    pub exists: bool,
    pub spent: bool,
}

/// Statement payloads, tagged by query type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatementPayload {
    Tip { tip: BlockTip },
    Outspend { tip: BlockTip, status: OutpointStatus },
}

impl StatementPayload {
    pub fn tip(&self) -> &BlockTip {
        match self {
            StatementPayload::Tip { tip } => tip,
            StatementPayload::Outspend { tip, .. } => tip,
        }
    }
}

/// A signed oracle response. The signature covers the exact payload bytes,
/// so verification never re-serializes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleStatement {
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
    pub signature: SigBytes,
    pub oracle_pubkey: PubKey,
}

impl OracleStatement {
    pub fn parse_payload(&self) -> Result<StatementPayload, OracleError> {
        from_json_bytes(&self.payload).map_err(|e| OracleError::MalformedStatement(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("oracle signature check failed")]
    BadSignature,
    #[error("statement signed by {got}, expected {expected}")]
    WrongKey { expected: String, got: String },
    #[error("malformed oracle statement: {0}")]
    MalformedStatement(String),
    #[error("oracle unavailable: {0}")]
    Unavailable(String),
}

/// Verifies the statement signature against a pinned oracle key and returns
/// the parsed payload.
pub fn verify_statement(
    statement: &OracleStatement,
    pinned_key: &PubKey,
) -> Result<StatementPayload, OracleError> {
    if &statement.oracle_pubkey != pinned_key {
        return Err(OracleError::WrongKey {
            expected: pinned_key.fingerprint().to_hex(),
            got: statement.oracle_pubkey.fingerprint().to_hex(),
        });
    }
    if !pinned_key.verify(&statement.payload, &statement.signature) {
        return Err(OracleError::BadSignature);
    }
    statement.parse_payload()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainFixture {
    pub tip_height: u64,
    /// Funding outputs known to the chain, and whether each is spent.
    pub utxos: Vec<FixtureUtxo>,
    #[serde(default = "default_base_timestamp")]
    pub base_timestamp: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixtureUtxo {
    pub outpoint: Outpoint,
    #[serde(default)]
    pub spent: bool,
}

fn default_base_timestamp() -> u64 {
    1_700_000_000
}

struct OracleState {
    tip_height: u64,
    base_height: u64,
    base_timestamp: u64,
    utxos: HashMap<Outpoint, bool>,
    offline: bool,
}

/// In-process oracle instance. Thread-safe; HTTP serving wraps this.
pub struct ChainOracle {
    keys: Keypair,
    state: Mutex<OracleState>,
}

impl ChainOracle {
    pub fn new(keys: Keypair, fixture: ChainFixture) -> Self {
        let utxos = fixture
            .utxos
            .iter()
            .map(|u| (u.outpoint, u.spent))
            .collect();
        ChainOracle {
            keys,
            state: Mutex::new(OracleState {
                tip_height: fixture.tip_height,
                base_height: fixture.tip_height,
                base_timestamp: fixture.base_timestamp,
                utxos,
                offline: false,
            }),
        }
    }

    pub fn public_key(&self) -> PubKey {
        self.keys.public()
    }

    fn tip_of(state: &OracleState, oracle_pubkey: &PubKey) -> BlockTip {
        // Deterministic chain: the block hash is derived from the height and
        // the oracle identity, and blocks arrive every 600 seconds.
        let mut preimage = Vec::with_capacity(5 + 32 + 8);
        preimage.extend_from_slice(b"block");
        preimage.extend_from_slice(&oracle_pubkey.0);
        preimage.extend_from_slice(&state.tip_height.to_be_bytes());
        BlockTip {
            height: state.tip_height,
            block_hash: Hash32(sha256(&preimage)),
            timestamp: state.base_timestamp + (state.tip_height - state.base_height) * 600,
        }
    }

    fn sign_payload(&self, payload: &StatementPayload) -> OracleStatement {
        let bytes = to_digest_json(payload);
        let signature = self.keys.sign(&bytes);
        OracleStatement {
            payload: bytes,
            signature,
            oracle_pubkey: self.keys.public(),
        }
    }

    pub fn tip(&self) -> Result<OracleStatement, OracleError> {
        let state = self.state.lock().unwrap();
        if state.offline {
            return Err(OracleError::Unavailable("oracle marked offline".into()));
        }
        let tip = Self::tip_of(&state, &self.keys.public());
        Ok(self.sign_payload(&StatementPayload::Tip { tip }))
    }

    /// The raw unsigned tip, for holders of the oracle itself.
    pub fn tip_snapshot(&self) -> BlockTip {
        let state = self.state.lock().unwrap();
        Self::tip_of(&state, &self.keys.public())
    }

    pub fn outspend(&self, outpoint: Outpoint) -> Result<OracleStatement, OracleError> {
        let state = self.state.lock().unwrap();
        if state.offline {
            return Err(OracleError::Unavailable("oracle marked offline".into()));
        }
        let tip = Self::tip_of(&state, &self.keys.public());
        let status = match state.utxos.get(&outpoint) {
            Some(&spent) => OutpointStatus {
                outpoint,
                exists: true,
                spent,
            },
            None => OutpointStatus {
                outpoint,
                exists: false,
                spent: false,
            },
        };
        Ok(self.sign_payload(&StatementPayload::Outspend { tip, status }))
    }

    /// Test hook: appends `blocks` empty blocks.
    pub fn advance_block(&self, blocks: u64) -> u64 {
        let mut state = self.state.lock().unwrap();
        state.tip_height += blocks;
        state.tip_height
    }

    /// Test hook: marks a funding output spent, adding it if unknown.
    pub fn mark_spent(&self, outpoint: Outpoint) {
        let mut state = self.state.lock().unwrap();
        state.utxos.insert(outpoint, true);
    }

    /// Test hook: toggles simulated outage.
    pub fn set_offline(&self, offline: bool) {
        self.state.lock().unwrap().offline = offline;
    }
}

/// How callers reach an oracle: in-process for tests, HTTP for the CLI.
pub trait OracleClient: Send + Sync {
    fn fetch_tip(&self) -> Result<OracleStatement, OracleError>;
    fn fetch_outspend(&self, outpoint: Outpoint) -> Result<OracleStatement, OracleError>;
}

impl OracleClient for ChainOracle {
    fn fetch_tip(&self) -> Result<OracleStatement, OracleError> {
        self.tip()
    }

    fn fetch_outspend(&self, outpoint: Outpoint) -> Result<OracleStatement, OracleError> {
        self.outspend(outpoint)
    }
}

impl<T: OracleClient + ?Sized> OracleClient for std::sync::Arc<T> {
    fn fetch_tip(&self) -> Result<OracleStatement, OracleError> {
        (**self).fetch_tip()
    }

    fn fetch_outspend(&self, outpoint: Outpoint) -> Result<OracleStatement, OracleError> {
        (**self).fetch_outspend(outpoint)
    }
}

impl ChainFixture {
    pub fn load(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        from_json_bytes(bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        to_wire_json(self)
    }
}
