//! Time-bucketed per-flow counters and the summaries built from them.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::routing::FlowId;
use crate::sim::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropCause {
    /// Retry exhaustion or a vanished link.
    Mac,
    /// Discarded by a drop rule after the source was rejected.
    Rejected,
    /// Interface queue overflow.
    Queue,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BucketCounters {
    pub packets_sent: u64,
    pub packets_delivered: u64,
    pub bits_delivered: u64,
    pub packets_dropped_mac: u64,
    pub packets_dropped_rejected: u64,
    pub packets_dropped_queue: u64,
}

impl BucketCounters {
    fn add(&mut self, o: &BucketCounters) {
        self.packets_sent += o.packets_sent;
        self.packets_delivered += o.packets_delivered;
        self.bits_delivered += o.bits_delivered;
        self.packets_dropped_mac += o.packets_dropped_mac;
        self.packets_dropped_rejected += o.packets_dropped_rejected;
        self.packets_dropped_queue += o.packets_dropped_queue;
    }

    pub fn dropped(&self) -> u64 {
        self.packets_dropped_mac + self.packets_dropped_rejected + self.packets_dropped_queue
    }
}

#[derive(Debug, Clone)]
pub struct MetricsLog {
    bucket_width: f64,
    duration: f64,
    attackers: Vec<bool>,
    buckets: Vec<Vec<BucketCounters>>,
    rejections: BTreeMap<FlowId, Time>,
    first_excess: BTreeMap<FlowId, Time>,
}

impl MetricsLog {
    pub fn new(attackers: Vec<bool>, duration: f64, bucket_width: f64) -> Self {
        assert!(bucket_width > 0.0 && duration > 0.0);
        let n = (duration / bucket_width).ceil().max(1.0) as usize;
        Self {
            bucket_width,
            duration,
            buckets: vec![vec![BucketCounters::default(); n]; attackers.len()],
            attackers,
            rejections: BTreeMap::new(),
            first_excess: BTreeMap::new(),
        }
    }

    pub fn bucket_width(&self) -> f64 {
        self.bucket_width
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.first().map_or(0, Vec::len)
    }

    pub fn flow_count(&self) -> usize {
        self.attackers.len()
    }

    pub fn is_attacker(&self, flow: FlowId) -> bool {
        self.attackers[flow]
    }

    pub fn legitimate_flows(&self) -> Vec<FlowId> {
        (0..self.flow_count()).filter(|&f| !self.attackers[f]).collect()
    }

    pub fn attacker_flows(&self) -> Vec<FlowId> {
        (0..self.flow_count()).filter(|&f| self.attackers[f]).collect()
    }

    pub fn bucket(&self, flow: FlowId, idx: usize) -> &BucketCounters {
        &self.buckets[flow][idx]
    }

    fn slot(&mut self, flow: FlowId, t: Time) -> &mut BucketCounters {
        let last = self.bucket_count() - 1;
        let idx = ((t / self.bucket_width).floor().max(0.0) as usize).min(last);
        &mut self.buckets[flow][idx]
    }

    pub fn record_sent(&mut self, flow: FlowId, t: Time) {
        self.slot(flow, t).packets_sent += 1;
    }

    pub fn record_delivered(&mut self, flow: FlowId, t: Time, bits: u64) {
        let b = self.slot(flow, t);
        b.packets_delivered += 1;
        b.bits_delivered += bits;
    }

    pub fn record_drop(&mut self, flow: FlowId, t: Time, cause: DropCause) {
        let b = self.slot(flow, t);
        match cause {
            DropCause::Mac => b.packets_dropped_mac += 1,
            DropCause::Rejected => b.packets_dropped_rejected += 1,
            DropCause::Queue => b.packets_dropped_queue += 1,
        }
    }

    pub fn record_rejection(&mut self, flow: FlowId, t: Time) {
        self.rejections.entry(flow).or_insert(t);
    }

    /// First tick at which some relay measured this flow above its ACR.
    pub fn record_excess(&mut self, flow: FlowId, t: Time) {
        self.first_excess.entry(flow).or_insert(t);
    }

    pub fn rejections(&self) -> &BTreeMap<FlowId, Time> {
        &self.rejections
    }

    pub fn first_excess(&self) -> &BTreeMap<FlowId, Time> {
        &self.first_excess
    }

    pub fn totals(&self, flow: FlowId) -> BucketCounters {
        let mut t = BucketCounters::default();
        for b in &self.buckets[flow] {
            t.add(b);
        }
        t
    }
}

/// Delivered bits per second for each bucket, summed over the chosen flows.
/// Each point is stamped with its bucket's start time.
pub fn received_bandwidth_series(log: &MetricsLog, legitimate_only: bool) -> Vec<(Time, f64)> {
    let flows: Vec<FlowId> = if legitimate_only {
        log.legitimate_flows()
    } else {
        (0..log.flow_count()).collect()
    };
    flow_series(log, &flows)
}

pub fn flow_series(log: &MetricsLog, flows: &[FlowId]) -> Vec<(Time, f64)> {
    (0..log.bucket_count())
        .map(|i| {
            let bits: u64 = flows.iter().map(|&f| log.bucket(f, i).bits_delivered).sum();
            (i as f64 * log.bucket_width(), bits as f64 / log.bucket_width())
        })
        .collect()
}

pub fn packet_delivery_ratio(log: &MetricsLog, flows: &[FlowId]) -> Result<f64> {
    let (sent, delivered) = flows.iter().fold((0u64, 0u64), |(s, d), &f| {
        let t = log.totals(f);
        (s + t.packets_sent, d + t.packets_delivered)
    });
    if sent == 0 {
        return Err(SimError::NoTraffic);
    }
    Ok(delivered as f64 / sent as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSummary {
    pub flow_id: FlowId,
    pub is_attacker: bool,
    pub sent: u64,
    pub delivered: u64,
    pub delivered_bits: u64,
    pub dropped_mac: u64,
    pub dropped_rejected: u64,
    pub dropped_queue: u64,
    pub in_flight: u64,
    pub rejected_at: Option<Time>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub flows: Vec<FlowSummary>,
    /// Legitimate-flow delivery ratio; absent if they sent nothing.
    pub legitimate_pdr: Option<f64>,
    /// Legitimate packets lost to any cause.
    pub lost_legitimate: u64,
    pub dropped_rejected: u64,
    /// Mean legitimate received bandwidth over the whole run, bits per second.
    pub mean_legitimate_bandwidth: f64,
    pub detection_times: Vec<(FlowId, Time)>,
    pub first_excess_times: Vec<(FlowId, Time)>,
    pub legitimate_rejected: usize,
}

pub fn summarize(log: &MetricsLog) -> Summary {
    let flows: Vec<FlowSummary> = (0..log.flow_count())
        .map(|f| {
            let t = log.totals(f);
            FlowSummary {
                flow_id: f,
                is_attacker: log.is_attacker(f),
                sent: t.packets_sent,
                delivered: t.packets_delivered,
                delivered_bits: t.bits_delivered,
                dropped_mac: t.packets_dropped_mac,
                dropped_rejected: t.packets_dropped_rejected,
                dropped_queue: t.packets_dropped_queue,
                in_flight: t.packets_sent - t.packets_delivered - t.dropped(),
                rejected_at: log.rejections().get(&f).copied(),
            }
        })
        .collect();
    let legit = log.legitimate_flows();
    let legit_bits: u64 = legit.iter().map(|&f| flows[f].delivered_bits).sum();
    Summary {
        legitimate_pdr: packet_delivery_ratio(log, &legit).ok(),
        lost_legitimate: legit
            .iter()
            .map(|&f| flows[f].dropped_mac + flows[f].dropped_rejected + flows[f].dropped_queue)
            .sum(),
        dropped_rejected: flows.iter().map(|f| f.dropped_rejected).sum(),
        mean_legitimate_bandwidth: legit_bits as f64 / log.duration(),
        detection_times: log
            .rejections()
            .iter()
            .filter(|(f, _)| log.is_attacker(**f))
            .map(|(f, t)| (*f, *t))
            .collect(),
        first_excess_times: log.first_excess().iter().map(|(f, t)| (*f, *t)).collect(),
        legitimate_rejected: log.rejections().keys().filter(|&&f| !log.is_attacker(f)).count(),
        flows,
    }
}
