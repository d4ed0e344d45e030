//! In-process Lightning graph with probe-based liquidity estimation.
//!
//! Implements the auditor-side estimator: binary search over probe amounts,
//! narrowing [lower, upper] bounds on a target channel's outbound liquidity
//! from probe successes and failures. Probes never move balances.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::canonical::{from_json_bytes, to_wire_json, Hash32};
use crate::channel::{ChannelPhase, ChannelState, LnError, Outpoint};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("no route from {src} to {dst}")]
    NoRoute { src: String, dst: String },
    #[error("tolerance must be at least 1 sat")]
    BadTolerance,
    #[error("probe of {amount_sat} sat obstructed outside the target channel: {detail}")]
    ProbeObstructed { amount_sat: u64, detail: String },
    #[error(transparent)]
    Channel(#[from] LnError),
}

/// Fixture entry: one channel with the `a` side's settled balance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphChannelSpec {
    pub id: String,
    pub a: String,
    pub b: String,
    pub capacity_sat: u64,
    pub local_sat_of_a: u64,
    #[serde(default)]
    pub reserve_sat: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphChannel {
    pub a: String,
    pub b: String,
    /// Channel state as seen from endpoint `a`.
    pub state: ChannelState,
}

impl GraphChannel {
    pub fn other_end(&self, node: &str) -> &str {
        if node == self.a {
            &self.b
        } else {
            &self.a
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkGraph {
    nodes: BTreeSet<String>,
    channels: BTreeMap<String, GraphChannel>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteHop {
    pub channel_id: String,
    pub from: String,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProbeOutcome {
    ReachedDestination,
    TemporaryChannelFailure { channel_id: String },
    NoRoute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiquidityEstimate {
    pub lower_bound_sat: u64,
    pub upper_bound_sat: u64,
    pub probes_used: u32,
}

/// Probe budget: ceil(log2(capacity / tolerance)) + 2.
pub fn probe_budget(capacity_sat: u64, tolerance_sat: u64) -> u32 {
    let ratio = capacity_sat.div_ceil(tolerance_sat.max(1)).max(1);
    (u64::BITS - (ratio - 1).leading_zeros()) + 2
}

impl NetworkGraph {
    pub fn from_specs(specs: &[GraphChannelSpec]) -> Result<Self, SimError> {
        let mut nodes = BTreeSet::new();
        let mut channels = BTreeMap::new();
        for spec in specs {
            if spec.a == spec.b {
                return Err(SimError::Channel(LnError::InvariantViolation(format!(
                    "channel {} loops on node {}",
                    spec.id, spec.a
                ))));
            }
            let funding = Outpoint::new(Hash32::of(format!("graph-channel:{}", spec.id).as_bytes()), 0);
            let state = ChannelState::new(
                spec.id.clone(),
                funding,
                spec.capacity_sat,
                spec.local_sat_of_a * 1000,
                spec.reserve_sat,
                ChannelPhase::Open,
            )?;
            nodes.insert(spec.a.clone());
            nodes.insert(spec.b.clone());
            channels.insert(
                spec.id.clone(),
                GraphChannel {
                    a: spec.a.clone(),
                    b: spec.b.clone(),
                    state,
                },
            );
        }
        Ok(NetworkGraph { nodes, channels })
    }

    pub fn load(bytes: &[u8]) -> Result<Self, SimError> {
        let specs: Vec<GraphChannelSpec> = from_json_bytes(bytes)
            .map_err(|e| SimError::Channel(LnError::InvariantViolation(e.to_string())))?;
        Self::from_specs(&specs)
    }

    pub fn channel(&self, id: &str) -> Result<&GraphChannel, SimError> {
        self.channels
            .get(id)
            .ok_or_else(|| SimError::UnknownChannel(id.to_string()))
    }

    pub fn channel_ids(&self) -> impl Iterator<Item = &String> {
        self.channels.keys()
    }

    /// Frozen bytes of the full channel-state map, for before/after
    /// neutrality comparisons.
    pub fn state_snapshot(&self) -> Vec<u8> {
        to_wire_json(&self.channels)
    }

    /// Outbound liquidity of `channel_id` in the direction leading away
    /// from `from_node`.
    pub fn direction_liquidity(&self, channel_id: &str, from_node: &str) -> Result<u64, SimError> {
        let channel = self.channel(channel_id)?;
        if from_node == channel.a {
            Ok(channel.state.outbound_liquidity()?)
        } else if from_node == channel.b {
            Ok(channel.state.viewed_from_remote().outbound_liquidity()?)
        } else {
            Err(SimError::UnknownNode(from_node.to_string()))
        }
    }

    /// Minimal-hop route among channels with capacity >= amount. Ties are
    /// broken by the lexicographically smallest channel-id sequence, so
    /// routing is deterministic.
    pub fn find_route(
        &self,
        src: &str,
        dst: &str,
        amount_sat: u64,
    ) -> Result<Vec<RouteHop>, SimError> {
        for node in [src, dst] {
            if !self.nodes.contains(node) {
                return Err(SimError::UnknownNode(node.to_string()));
            }
        }
        // Dijkstra over key (hop count, channel-id sequence); uniform hop
        // weights make this BFS with a deterministic tie-break.
        #[derive(PartialEq, Eq)]
        struct Entry {
            hops: usize,
            ids: Vec<String>,
            node: String,
        }
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                (other.hops, &other.ids).cmp(&(self.hops, &self.ids))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut heap = BinaryHeap::new();
        let mut done: BTreeSet<String> = BTreeSet::new();
        heap.push(Entry {
            hops: 0,
            ids: Vec::new(),
            node: src.to_string(),
        });
        while let Some(entry) = heap.pop() {
            if entry.node == dst {
                let mut hops = Vec::with_capacity(entry.ids.len());
                let mut at = src.to_string();
                for id in entry.ids {
                    let to = self.channels[&id].other_end(&at).to_string();
                    hops.push(RouteHop {
                        channel_id: id,
                        from: at,
                        to: to.clone(),
                    });
                    at = to;
                }
                return Ok(hops);
            }
            if !done.insert(entry.node.clone()) {
                continue;
            }
            for (id, channel) in &self.channels {
                if channel.a != entry.node && channel.b != entry.node {
                    continue;
                }
                if channel.state.capacity_sat < amount_sat {
                    continue;
                }
                let next = channel.other_end(&entry.node);
                if done.contains(next) {
                    continue;
                }
                let mut ids = entry.ids.clone();
                ids.push(id.clone());
                heap.push(Entry {
                    hops: entry.hops + 1,
                    ids,
                    node: next.to_string(),
                });
            }
        }
        Err(SimError::NoRoute {
            src: src.to_string(),
            dst: dst.to_string(),
        })
    }

    /// Routes a probe HTLC and reports where it died. The payment always
    /// fails at the destination with an unfulfillable preimage, so channel
    /// states are untouched regardless of outcome.
    pub fn send_probe(&self, src: &str, dst: &str, amount_sat: u64) -> ProbeOutcome {
        assert!(amount_sat > 0, "probe amount must be positive");
        let route = match self.find_route(src, dst, amount_sat) {
            Ok(route) => route,
            Err(_) => return ProbeOutcome::NoRoute,
        };
        for hop in &route {
            let liquidity = match self.direction_liquidity(&hop.channel_id, &hop.from) {
                Ok(l) => l,
                Err(_) => return ProbeOutcome::TemporaryChannelFailure {
                    channel_id: hop.channel_id.clone(),
                },
            };
            if liquidity < amount_sat {
                return ProbeOutcome::TemporaryChannelFailure {
                    channel_id: hop.channel_id.clone(),
                };
            }
        }
        ProbeOutcome::ReachedDestination
    }

    /// Picks the probe destination: the endpoint of the target channel that
    /// a route from `src` crosses the channel to reach.
    fn probe_destination(&self, src: &str, target_channel: &str) -> Result<String, SimError> {
        let channel = self.channel(target_channel)?;
        for dst in [channel.b.clone(), channel.a.clone()] {
            if dst == src {
                continue;
            }
            if let Ok(route) = self.find_route(src, &dst, 1) {
                if route.iter().any(|h| h.channel_id == target_channel) {
                    return Ok(dst);
                }
            }
        }
        Err(SimError::NoRoute {
            src: src.to_string(),
            dst: channel.b.clone(),
        })
    }

    /// Auditor-driven estimator: binary search over probe amounts through
    /// the target channel until the bounds pinch to within `tolerance_sat`.
    /// The true liquidity always lies in [lower, upper].
    pub fn estimate_liquidity(
        &self,
        src: &str,
        target_channel: &str,
        tolerance_sat: u64,
    ) -> Result<LiquidityEstimate, SimError> {
        if tolerance_sat == 0 {
            return Err(SimError::BadTolerance);
        }
        let capacity = self.channel(target_channel)?.state.capacity_sat;
        let dst = self.probe_destination(src, target_channel)?;

        let mut lower = 0u64;
        let mut upper = capacity;
        let mut probes_used = 0u32;
        while upper - lower >= tolerance_sat {
            let mid = lower + (upper - lower).div_ceil(2);
            probes_used += 1;
            match self.send_probe(src, &dst, mid) {
                ProbeOutcome::ReachedDestination => lower = mid,
                ProbeOutcome::TemporaryChannelFailure { channel_id }
                    if channel_id == target_channel =>
                {
                    upper = mid - 1;
                }
                ProbeOutcome::TemporaryChannelFailure { channel_id } => {
                    return Err(SimError::ProbeObstructed {
                        amount_sat: mid,
                        detail: format!("failure at channel {channel_id}"),
                    });
                }
                ProbeOutcome::NoRoute => {
                    return Err(SimError::ProbeObstructed {
                        amount_sat: mid,
                        detail: "no route at this amount".into(),
                    });
                }
            }
        }
        Ok(LiquidityEstimate {
            lower_bound_sat: lower,
            upper_bound_sat: upper,
            probes_used,
        })
    }
}
