//! Constant-bit-rate sources and the seeded choice of flow endpoints.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::routing::FlowId;
use crate::sim::Time;
use crate::topology::{NodeId, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub flow_id: FlowId,
    pub source_id: NodeId,
    pub destination_id: NodeId,
    /// Offered rate, bits per second.
    pub data_rate: f64,
    pub packet_size: u32,
    pub start_time: Time,
    pub is_attacker: bool,
    /// Rate asked for in the bandwidth query. Equals `data_rate` for honest
    /// sources; an attacker declares an ordinary rate and then floods.
    pub requested_rate: f64,
}

impl FlowSpec {
    pub fn packet_bits(&self) -> u64 {
        u64::from(self.packet_size) * 8
    }
}

/// CBR emission time of the next packet. Attackers ignore `current_rate`.
pub fn next_packet_time(flow: &FlowSpec, current_rate: f64, now: Time) -> Result<Time> {
    let rate = if flow.is_attacker {
        flow.data_rate
    } else {
        current_rate
    };
    if !(rate > 0.0) {
        return Err(SimError::RateZero(flow.flow_id));
    }
    Ok(now + flow.packet_bits() as f64 / rate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMix {
    pub legitimate: usize,
    pub attackers: usize,
    pub legitimate_rate: f64,
    pub attack_rate: f64,
    pub packet_size: u32,
    pub legitimate_start: Time,
    pub attack_start: Time,
    pub min_hops: usize,
}

/// Draw endpoints for `mix` inside the largest connected component.
///
/// Every flow gets its own source node, no node is both a source and a
/// destination, and endpoints are at least `min_hops` hops apart. Legitimate
/// flows are drawn first, so they do not depend on the attacker count.
pub fn generate_flows<R: Rng>(topology: &Topology, mix: &FlowMix, rng: &mut R) -> Result<Vec<FlowSpec>> {
    let component = topology.largest_component();
    let total = mix.legitimate + mix.attackers;
    let mut nodes = component.clone();
    nodes.shuffle(rng);

    let mut used_sources = BTreeSet::new();
    let mut used_destinations = BTreeSet::new();
    let mut flows = Vec::with_capacity(total);
    let mut candidates = nodes.iter().copied();
    while flows.len() < total {
        let Some(source) = candidates.next() else {
            return Err(SimError::validation(
                "flows",
                format!("cannot place {total} flows with distinct sources at >= {} hops", mix.min_hops),
            ));
        };
        if used_destinations.contains(&source) {
            continue;
        }
        let dist = topology.hop_distances(source);
        let dests: Vec<NodeId> = component
            .iter()
            .copied()
            .filter(|&d| dist[d].is_some_and(|h| h >= mix.min_hops) && !used_sources.contains(&d))
            .collect();
        if dests.is_empty() {
            continue;
        }
        let destination = dests[rng.random_range(0..dests.len())];
        used_sources.insert(source);
        used_destinations.insert(destination);
        let flow_id = flows.len();
        let is_attacker = flow_id >= mix.legitimate;
        flows.push(FlowSpec {
            flow_id,
            source_id: source,
            destination_id: destination,
            data_rate: if is_attacker {
                mix.attack_rate
            } else {
                mix.legitimate_rate
            },
            packet_size: mix.packet_size,
            start_time: if is_attacker {
                mix.attack_start
            } else {
                mix.legitimate_start
            },
            is_attacker,
            requested_rate: mix.legitimate_rate,
        });
    }
    Ok(flows)
}
