//! Payment channel state, HTLC lifecycle, and aggregate balance reporting.
//!
//! Channel states are immutable snapshots: every transition returns a new
//! value and bumps the commitment number, which is what the reestablish
//! check compares to detect rolled-back state.

use serde::{Deserialize, Serialize};

use crate::canonical::{to_wire_json, Hash32};

/// A transaction output anchoring a channel on chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Outpoint {
    pub txid: Hash32,
    pub vout: u32,
}

impl Outpoint {
    pub fn new(txid: Hash32, vout: u32) -> Self {
        Outpoint { txid, vout }
    }
}

impl std::fmt::Display for Outpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.txid, self.vout)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HtlcDirection {
    Offered,
    Received,
}

/// An in-flight conditional payment. Reduces the offering side's usable
/// balance until settled or failed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Htlc {
    pub id: u64,
    pub amount_msat: u64,
    pub direction: HtlcDirection,
    pub payment_hash: Hash32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelPhase {
    Opening,
    Open,
    Closed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HtlcOutcome {
    Settle,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LnError {
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("channel {0} is not in the required phase")]
    WrongPhase(String),
    #[error("insufficient liquidity: requested {requested_msat} msat, available {available_msat} msat")]
    InsufficientLiquidity {
        requested_msat: u64,
        available_msat: u64,
    },
    #[error("unknown HTLC id {0}")]
    UnknownHtlc(u64),
    #[error("channel id mismatch: local {local}, peer {peer}")]
    ChannelMismatch { local: String, peer: String },
}

/// One payment channel as seen from the local node.
///
/// Conservation invariant: for Opening and Open channels,
/// `local_msat + remote_msat + sum(htlc amounts) == capacity_sat * 1000`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelState {
    pub channel_id: String,
    pub funding_outpoint: Outpoint,
    pub capacity_sat: u64,
    pub local_msat: u64,
    pub remote_msat: u64,
    pub reserve_sat: u64,
    pub htlcs: Vec<Htlc>,
    pub commitment_number: u64,
    pub phase: ChannelPhase,
    #[serde(default)]
    next_htlc_id: u64,
}

impl ChannelState {
    /// Creates a channel with the full capacity split between the two sides
    /// and no HTLCs in flight.
    pub fn new(
        channel_id: impl Into<String>,
        funding_outpoint: Outpoint,
        capacity_sat: u64,
        local_msat: u64,
        reserve_sat: u64,
        phase: ChannelPhase,
    ) -> Result<Self, LnError> {
        let capacity_msat = capacity_sat
            .checked_mul(1000)
            .ok_or_else(|| LnError::InvariantViolation("capacity overflows msat".into()))?;
        if local_msat > capacity_msat {
            return Err(LnError::InvariantViolation(format!(
                "local balance {local_msat} msat exceeds capacity {capacity_msat} msat"
            )));
        }
        let state = ChannelState {
            channel_id: channel_id.into(),
            funding_outpoint,
            capacity_sat,
            local_msat,
            remote_msat: capacity_msat - local_msat,
            reserve_sat,
            htlcs: Vec::new(),
            commitment_number: 0,
            phase,
            next_htlc_id: 0,
        };
        state.validate()?;
        Ok(state)
    }

    /// Checks the conservation and reserve invariants.
    pub fn validate(&self) -> Result<(), LnError> {
        if self.reserve_sat > self.capacity_sat / 2 {
            return Err(LnError::InvariantViolation(format!(
                "channel {}: reserve {} sat exceeds half of capacity {} sat",
                self.channel_id, self.reserve_sat, self.capacity_sat
            )));
        }
        for htlc in &self.htlcs {
            if htlc.amount_msat == 0 {
                return Err(LnError::InvariantViolation(format!(
                    "channel {}: HTLC {} has zero amount",
                    self.channel_id, htlc.id
                )));
            }
        }
        if matches!(self.phase, ChannelPhase::Opening | ChannelPhase::Open) {
            let inflight: u128 = self.htlcs.iter().map(|h| h.amount_msat as u128).sum();
            let total = self.local_msat as u128 + self.remote_msat as u128 + inflight;
            let expected = self.capacity_sat as u128 * 1000;
            if total != expected {
                return Err(LnError::InvariantViolation(format!(
                    "channel {}: {} msat accounted for, capacity is {} msat",
                    self.channel_id, total, expected
                )));
            }
        }
        Ok(())
    }

    /// Local balance available for sending: local balance minus the channel
    /// reserve and all offered in-flight HTLCs, floored at zero, in whole
    /// satoshis.
    pub fn outbound_liquidity(&self) -> Result<u64, LnError> {
        if self.phase != ChannelPhase::Open {
            return Err(LnError::WrongPhase(self.channel_id.clone()));
        }
        let offered: i128 = self
            .htlcs
            .iter()
            .filter(|h| h.direction == HtlcDirection::Offered)
            .map(|h| h.amount_msat as i128)
            .sum();
        let avail_msat = self.local_msat as i128 - self.reserve_sat as i128 * 1000 - offered;
        Ok((avail_msat.max(0) / 1000) as u64)
    }

    /// Adds an in-flight HTLC, debiting the offering side. The commitment
    /// number advances by one.
    pub fn add_htlc(
        &self,
        amount_msat: u64,
        direction: HtlcDirection,
        payment_hash: Hash32,
    ) -> Result<ChannelState, LnError> {
        if self.phase != ChannelPhase::Open {
            return Err(LnError::WrongPhase(self.channel_id.clone()));
        }
        if amount_msat == 0 {
            return Err(LnError::InvariantViolation("HTLC amount must be positive".into()));
        }
        let available_msat = match direction {
            HtlcDirection::Offered => self.outbound_liquidity()? * 1000,
            HtlcDirection::Received => self.viewed_from_remote().outbound_liquidity()? * 1000,
        };
        if amount_msat > available_msat {
            return Err(LnError::InsufficientLiquidity {
                requested_msat: amount_msat,
                available_msat,
            });
        }
        let mut next = self.clone();
        match direction {
            HtlcDirection::Offered => next.local_msat -= amount_msat,
            HtlcDirection::Received => next.remote_msat -= amount_msat,
        }
        next.htlcs.push(Htlc {
            id: next.next_htlc_id,
            amount_msat,
            direction,
            payment_hash,
        });
        next.next_htlc_id += 1;
        next.commitment_number += 1;
        debug_assert!(next.validate().is_ok());
        Ok(next)
    }

    /// Settles or fails an in-flight HTLC. Settle moves the amount to the
    /// receiving side, Fail returns it to the offering side.
    pub fn resolve_htlc(&self, htlc_id: u64, outcome: HtlcOutcome) -> Result<ChannelState, LnError> {
        let pos = self
            .htlcs
            .iter()
            .position(|h| h.id == htlc_id)
            .ok_or(LnError::UnknownHtlc(htlc_id))?;
        let mut next = self.clone();
        let htlc = next.htlcs.remove(pos);
        match (htlc.direction, outcome) {
            (HtlcDirection::Offered, HtlcOutcome::Settle) => next.remote_msat += htlc.amount_msat,
            (HtlcDirection::Offered, HtlcOutcome::Fail) => next.local_msat += htlc.amount_msat,
            (HtlcDirection::Received, HtlcOutcome::Settle) => next.local_msat += htlc.amount_msat,
            (HtlcDirection::Received, HtlcOutcome::Fail) => next.remote_msat += htlc.amount_msat,
        }
        next.commitment_number += 1;
        debug_assert!(next.validate().is_ok());
        Ok(next)
    }

    /// The same channel as seen by the counterparty: balances swapped and
    /// HTLC directions flipped.
    pub fn viewed_from_remote(&self) -> ChannelState {
        let mut flipped = self.clone();
        std::mem::swap(&mut flipped.local_msat, &mut flipped.remote_msat);
        for htlc in &mut flipped.htlcs {
            htlc.direction = match htlc.direction {
                HtlcDirection::Offered => HtlcDirection::Received,
                HtlcDirection::Received => HtlcDirection::Offered,
            };
        }
        flipped
    }

    /// The reestablish message this side would send on reconnect.
    pub fn reestablish_msg(&self) -> ReestablishMsg {
        ReestablishMsg {
            channel_id: self.channel_id.clone(),
            next_commitment_number: self.commitment_number + 1,
        }
    }
}

/// Peer-level reconnect handshake carrying the commitment counter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReestablishMsg {
    pub channel_id: String,
    pub next_commitment_number: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReestablishOutcome {
    Ok,
    /// Commitment numbers disagree; the caller must treat this as a
    /// force-close trigger.
    StaleState,
}

/// Compares the peer's expected next commitment number against local state.
/// Any mismatch means one side holds rolled-back state.
pub fn reestablish_check(
    local: &ChannelState,
    peer: &ReestablishMsg,
) -> Result<ReestablishOutcome, LnError> {
    if local.channel_id != peer.channel_id {
        return Err(LnError::ChannelMismatch {
            local: local.channel_id.clone(),
            peer: peer.channel_id.clone(),
        });
    }
    if peer.next_commitment_number == local.commitment_number + 1 {
        Ok(ReestablishOutcome::Ok)
    } else {
        Ok(ReestablishOutcome::StaleState)
    }
}

/// A satoshi/millisatoshi pair as decimal strings on the wire.
///
/// Report pairs are whole-satoshi: `msat == sat * 1000` always holds for
/// values built through the constructors. Sub-satoshi remainders are floored
/// at construction. Parsing is deliberately lenient (no pair check) so that
/// tampered reports reach the binding-hash comparison instead of failing at
/// the JSON layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Amount {
    pub sat: u64,
    pub msat: u64,
}

impl Amount {
    pub fn zero() -> Self {
        Amount { sat: 0, msat: 0 }
    }

    pub fn from_sat(sat: u64) -> Self {
        Amount {
            sat,
            msat: sat * 1000,
        }
    }

    pub fn from_msat_floor(msat: u128) -> Self {
        let sat = (msat / 1000) as u64;
        Amount {
            sat,
            msat: sat * 1000,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.msat == self.sat.wrapping_mul(1000)
    }
}

impl Serialize for Amount {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("Amount", 2)?;
        s.serialize_field("sat", &self.sat.to_string())?;
        s.serialize_field("msat", &self.msat.to_string())?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            sat: String,
            msat: String,
        }
        let raw = Raw::deserialize(deserializer)?;
        let sat = raw.sat.parse::<u64>().map_err(serde::de::Error::custom)?;
        let msat = raw.msat.parse::<u64>().map_err(serde::de::Error::custom)?;
        Ok(Amount { sat, msat })
    }
}

/// Aggregate channel balances in the node's REST wire shape: six
/// sat/msat pairs, in this exact key order.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BalanceReport {
    pub local_balance: Amount,
    pub remote_balance: Amount,
    pub unsettled_local_balance: Amount,
    pub unsettled_remote_balance: Amount,
    pub pending_open_local_balance: Amount,
    pub pending_open_remote_balance: Amount,
}

impl BalanceReport {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Frozen wire bytes served at `/v1/balance/channels` and bound into
    /// attestation report data.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        to_wire_json(self)
    }

    pub fn pairs(&self) -> [(&'static str, Amount); 6] {
        [
            ("local_balance", self.local_balance),
            ("remote_balance", self.remote_balance),
            ("unsettled_local_balance", self.unsettled_local_balance),
            ("unsettled_remote_balance", self.unsettled_remote_balance),
            ("pending_open_local_balance", self.pending_open_local_balance),
            ("pending_open_remote_balance", self.pending_open_remote_balance),
        ]
    }

    pub fn validate(&self) -> Result<(), LnError> {
        for (name, amount) in self.pairs() {
            if !amount.is_consistent() {
                return Err(LnError::InvariantViolation(format!(
                    "{name}: msat {} != sat {} * 1000",
                    amount.msat, amount.sat
                )));
            }
        }
        Ok(())
    }
}

/// Sums per-channel balances into the aggregate report.
///
/// Open channels feed the settled fields, Opening channels the pending-open
/// fields, in-flight HTLCs the unsettled fields (offered ones are still ours
/// until settled, so they count as unsettled-local). Closed channels
/// contribute nothing.
pub fn aggregate_balance_report(channels: &[ChannelState]) -> Result<BalanceReport, LnError> {
    let mut local: u128 = 0;
    let mut remote: u128 = 0;
    let mut unsettled_local: u128 = 0;
    let mut unsettled_remote: u128 = 0;
    let mut pending_local: u128 = 0;
    let mut pending_remote: u128 = 0;

    for channel in channels {
        channel.validate()?;
        match channel.phase {
            ChannelPhase::Closed => continue,
            ChannelPhase::Open => {
                local += channel.local_msat as u128;
                remote += channel.remote_msat as u128;
            }
            ChannelPhase::Opening => {
                pending_local += channel.local_msat as u128;
                pending_remote += channel.remote_msat as u128;
            }
        }
        for htlc in &channel.htlcs {
            match htlc.direction {
                HtlcDirection::Offered => unsettled_local += htlc.amount_msat as u128,
                HtlcDirection::Received => unsettled_remote += htlc.amount_msat as u128,
            }
        }
    }

    Ok(BalanceReport {
        local_balance: Amount::from_msat_floor(local),
        remote_balance: Amount::from_msat_floor(remote),
        unsettled_local_balance: Amount::from_msat_floor(unsettled_local),
        unsettled_remote_balance: Amount::from_msat_floor(unsettled_remote),
        pending_open_local_balance: Amount::from_msat_floor(pending_local),
        pending_open_remote_balance: Amount::from_msat_floor(pending_remote),
    })
}
