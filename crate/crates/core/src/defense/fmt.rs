//! Flow monitoring table and the per-stream rate equations.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Result, SimError};
use crate::routing::FlowId;
use crate::sim::Time;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Active,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Compliant,
    Attack,
}

/// A flow's passage through one node: (upstream neighbour, downstream neighbour).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamKey {
    pub flow_id: FlowId,
    pub upstream: Option<NodeId>,
    pub downstream: Option<NodeId>,
}

/// How an intermediate node estimates a flow's sending rate at each tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateEstimator {
    /// Bits counted over the interval divided by its length.
    Count,
    /// Packet size over the median inter-arrival gap; falls back to `Count`
    /// when fewer than three packets arrived.
    MedianGap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmtEntry {
    pub key: StreamKey,
    pub source_id: NodeId,
    pub destination_id: NodeId,
    pub sending_rate: f64,
    pub previous_sending_rate: f64,
    /// AR: granted at reservation time, lowered by congestion notices.
    pub assigned_rate: f64,
    /// ACR: W x AR.
    pub actual_rate: f64,
    /// RR: bandwidth reserved at this node for the stream.
    pub reserved_rate: f64,
    /// C: bits seen during the current interval.
    pub traffic_counter: f64,
    /// MR: C / T from the last completed interval.
    pub measured_rate: f64,
    pub status: FlowStatus,
    /// ACR in force when the current interval opened.
    pub interval_acr: f64,
    /// Tick index of the last completed interval.
    pub interval: u64,
    last_arrival: Option<Time>,
    gaps: Vec<f64>,
    packet_bits: f64,
}

impl FmtEntry {
    pub fn new(key: StreamKey, source_id: NodeId, destination_id: NodeId, assigned_rate: f64) -> Self {
        Self {
            key,
            source_id,
            destination_id,
            sending_rate: 0.0,
            previous_sending_rate: 0.0,
            assigned_rate,
            actual_rate: assigned_rate,
            reserved_rate: 0.0,
            traffic_counter: 0.0,
            measured_rate: 0.0,
            status: FlowStatus::Active,
            interval_acr: assigned_rate,
            interval: 0,
            last_arrival: None,
            gaps: Vec::new(),
            packet_bits: 0.0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == FlowStatus::Active
    }

    /// Account one packet of `bits` seen at `now`.
    pub fn count(&mut self, bits: f64, now: Time) {
        self.traffic_counter += bits;
        if let Some(prev) = self.last_arrival {
            self.gaps.push(now - prev);
        }
        self.last_arrival = Some(now);
        self.packet_bits = bits;
    }

    /// Close the interval with [`measure_rate`], then refine the
    /// sending-rate estimate if the estimator asks for it.
    pub fn close_interval(&mut self, period: f64, estimator: RateEstimator, tick: u64) -> f64 {
        let mr = measure_rate(self, period);
        if estimator == RateEstimator::MedianGap {
            if let Some(rate) = self.median_gap_rate() {
                self.sending_rate = rate;
            }
        }
        self.gaps.clear();
        self.interval = tick;
        mr
    }

    fn median_gap_rate(&self) -> Option<f64> {
        if self.gaps.len() < 2 {
            return None;
        }
        let mut g = self.gaps.clone();
        g.sort_by(f64::total_cmp);
        let n = g.len();
        let median = if n % 2 == 1 {
            g[n / 2]
        } else {
            0.5 * (g[n / 2 - 1] + g[n / 2])
        };
        (median > 0.0).then(|| self.packet_bits / median)
    }

    /// Mark the stream REJECTED; there is no way back.
    pub fn reject(&mut self) {
        self.status = FlowStatus::Rejected;
    }
}

/// Capacity-weighted allocation over the active streams at one node:
/// W = min(1, L_c / sum AR), ACR = W x AR. Returns W.
pub fn allocate_rates<'a, I>(link_capacity: f64, streams: I) -> f64
where
    I: IntoIterator<Item = &'a mut FmtEntry>,
{
    let mut active: Vec<&mut FmtEntry> = streams.into_iter().filter(|e| e.is_active()).collect();
    let total: f64 = active.iter().map(|e| e.assigned_rate).sum();
    let w = if total > 0.0 {
        (link_capacity / total).min(1.0)
    } else {
        1.0
    };
    for e in active.iter_mut() {
        e.actual_rate = w * e.assigned_rate;
    }
    w
}

/// Congestion bit: AR <- max(0, ACR - delta). Returns the new AR.
pub fn apply_congestion_bit(entry: &mut FmtEntry, delta: f64) -> f64 {
    entry.assigned_rate = (entry.actual_rate - delta).max(0.0);
    entry.assigned_rate
}

/// MR = C / T. Resets C and shifts the sending-rate history.
pub fn measure_rate(entry: &mut FmtEntry, period: f64) -> f64 {
    assert!(period > 0.0, "measurement interval must be positive");
    entry.measured_rate = entry.traffic_counter / period;
    entry.traffic_counter = 0.0;
    entry.previous_sending_rate = entry.sending_rate;
    entry.sending_rate = entry.measured_rate;
    entry.measured_rate
}

/// Attack iff the measured rate strictly exceeds the actual rate.
pub fn classify_flow(measured_rate: f64, actual_rate: f64) -> Classification {
    if measured_rate > actual_rate {
        Classification::Attack
    } else {
        Classification::Compliant
    }
}

/// True when a sender kept its rate (within relative tolerance `epsilon`)
/// across a congestion notice.
pub fn detect_unresponsive_sender(previous_rate: f64, current_rate: f64, epsilon: f64) -> Result<bool> {
    if previous_rate == 0.0 {
        return Err(SimError::UndefinedComparison);
    }
    Ok(((current_rate - previous_rate) / previous_rate).abs() <= epsilon)
}

/// Available-bandwidth bookkeeping at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeBandwidthState {
    pub link_capacity: f64,
    pub reserved_total: f64,
    pub available_bandwidth: f64,
}

/// Per-node defense state: FMT rows, bandwidth ledger and installed drop rules.
#[derive(Debug, Clone)]
pub struct FlowTable {
    pub node: NodeId,
    link_capacity: f64,
    entries: BTreeMap<StreamKey, FmtEntry>,
    drop_rules: BTreeSet<NodeId>,
}

impl FlowTable {
    pub fn new(node: NodeId, link_capacity: f64) -> Self {
        Self {
            node,
            link_capacity,
            entries: BTreeMap::new(),
            drop_rules: BTreeSet::new(),
        }
    }

    pub fn link_capacity(&self) -> f64 {
        self.link_capacity
    }

    pub fn reserved_total(&self) -> f64 {
        self.entries.values().map(|e| e.reserved_rate).sum()
    }

    /// ABW = L_c - reserved, never negative.
    pub fn available_bandwidth(&self) -> f64 {
        (self.link_capacity - self.reserved_total()).max(0.0)
    }

    pub fn bandwidth_state(&self) -> NodeBandwidthState {
        let reserved_total = self.reserved_total();
        NodeBandwidthState {
            link_capacity: self.link_capacity,
            reserved_total,
            available_bandwidth: (self.link_capacity - reserved_total).max(0.0),
        }
    }

    pub fn entry(&self, key: &StreamKey) -> Option<&FmtEntry> {
        self.entries.get(key)
    }

    pub fn entry_mut(&mut self, key: &StreamKey) -> Option<&mut FmtEntry> {
        self.entries.get_mut(key)
    }

    pub fn insert(&mut self, entry: FmtEntry) {
        self.entries.insert(entry.key, entry);
    }

    pub fn entries(&self) -> impl Iterator<Item = &FmtEntry> {
        self.entries.values()
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut FmtEntry> {
        self.entries.values_mut()
    }

    /// The stream a flow currently uses at this node, if any.
    pub fn flow_entry(&self, flow: FlowId) -> Option<&FmtEntry> {
        self.entries.values().find(|e| e.key.flow_id == flow)
    }

    pub fn flow_entry_mut(&mut self, flow: FlowId) -> Option<&mut FmtEntry> {
        self.entries.values_mut().find(|e| e.key.flow_id == flow)
    }

    /// Rerun [`allocate_rates`] over this node's streams.
    pub fn allocate(&mut self) -> f64 {
        allocate_rates(self.link_capacity, self.entries.values_mut())
    }

    /// Add `amount` to the stream's reservation.
    pub fn reserve(&mut self, key: &StreamKey, amount: f64) {
        if let Some(e) = self.entries.get_mut(key) {
            e.reserved_rate += amount;
        }
    }

    /// Release every reservation a flow holds here. Returns the amount freed.
    pub fn release_flow(&mut self, flow: FlowId) -> f64 {
        let mut freed = 0.0;
        for e in self.entries.values_mut().filter(|e| e.key.flow_id == flow) {
            freed += e.reserved_rate;
            e.reserved_rate = 0.0;
        }
        freed
    }

    /// Remove a flow's rows altogether (abandoned query or path).
    pub fn forget_flow(&mut self, flow: FlowId) {
        self.entries.retain(|k, _| k.flow_id != flow);
        self.allocate();
    }

    pub fn install_drop_rule(&mut self, source: NodeId) -> bool {
        self.drop_rules.insert(source)
    }

    pub fn blocks(&self, source: NodeId) -> bool {
        self.drop_rules.contains(&source)
    }
}
