//! Abstract shared-medium contention model.
//!
//! No per-frame RTS/CTS exchange is simulated. A transmission from `s` to `r`
//! reserves the medium for every node in range of either endpoint for
//! `bits / capacity` seconds, which is what a successful RTS/CTS handshake
//! buys in 802.11. Each of those nodes logs one virtual RTS/CTS receipt. A
//! sender that finds itself or its receiver inside a reservation backs off
//! for an exponential time whose mean doubles per attempt; every deferred
//! attempt counts as a retransmission and the frame is dropped once the retry
//! budget is spent.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::Time;
use crate::topology::{NodeId, Topology};

/// Windowed channel observations at one node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MacSignals {
    /// Virtual RTS/CTS receipts per second.
    pub rts_cts_frequency: f64,
    /// Fraction of the window the medium was sensed busy, in [0, 1].
    pub busy_fraction: f64,
    /// The node's own deferred or failed attempts during the window.
    pub retransmission_count: u64,
    pub window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionThresholds {
    pub busy: f64,
    pub rts_per_s: f64,
    pub retx: f64,
}

impl Default for CongestionThresholds {
    fn default() -> Self {
        Self {
            busy: 0.8,
            rts_per_s: 200.0,
            retx: 10.0,
        }
    }
}

/// Any one signal above its threshold flags congestion.
pub fn congestion_detected(signals: &MacSignals, thresholds: &CongestionThresholds) -> bool {
    signals.busy_fraction > thresholds.busy
        || signals.rts_cts_frequency > thresholds.rts_per_s
        || signals.retransmission_count as f64 > thresholds.retx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacConfig {
    pub max_retries: u32,
    /// Mean of the first backoff, seconds; doubles on each further attempt.
    pub backoff_mean: f64,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            max_retries: 7,
            backoff_mean: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TxOutcome {
    /// Medium acquired; the frame is fully received at `delivery_time`.
    Delivered { delivery_time: Time },
    /// Medium busy; try again at `retry_at` (this was deferred attempt number `attempt`).
    Retry { retry_at: Time, attempt: u32 },
    /// Retry budget exhausted.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxRecord {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub start: Time,
    pub end: Time,
}

#[derive(Debug, Clone, Default)]
struct NodeCounters {
    busy_until: Time,
    // Busy time accrued since the last sample, including any overhang past it.
    busy_accum: f64,
    rts_cts: u64,
    retransmissions: u64,
}

#[derive(Debug, Clone)]
pub struct ChannelState {
    capacity_bps: f64,
    config: MacConfig,
    nodes: Vec<NodeCounters>,
    mac_drops: u64,
    log: Option<Vec<TxRecord>>,
}

impl ChannelState {
    pub fn new(node_count: usize, capacity_bps: f64, config: MacConfig) -> Self {
        assert!(capacity_bps > 0.0, "link capacity must be positive");
        Self {
            capacity_bps,
            config,
            nodes: vec![NodeCounters::default(); node_count],
            mac_drops: 0,
            log: None,
        }
    }

    /// Keep every successful transmission for later inspection.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn log(&self) -> &[TxRecord] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn capacity(&self) -> f64 {
        self.capacity_bps
    }

    pub fn config(&self) -> &MacConfig {
        &self.config
    }

    pub fn mac_drops(&self) -> u64 {
        self.mac_drops
    }

    pub fn airtime(&self, bits: u64) -> Time {
        bits as f64 / self.capacity_bps
    }

    pub fn is_busy(&self, node: NodeId, now: Time) -> bool {
        self.nodes[node].busy_until > now
    }

    pub fn busy_until(&self, node: NodeId) -> Time {
        self.nodes[node].busy_until
    }

    fn mark_busy(&mut self, node: NodeId, now: Time, end: Time) {
        let c = &mut self.nodes[node];
        let from = c.busy_until.max(now);
        if end > from {
            c.busy_accum += end - from;
            c.busy_until = end;
        }
    }

    /// One attempt by `sender` to put `packet_bits` on the air towards `receiver`.
    ///
    /// `prior_attempts` is how many deferred attempts this frame has already made.
    pub fn begin_transmission<R: Rng>(
        &mut self,
        topology: &Topology,
        sender: NodeId,
        receiver: NodeId,
        packet_bits: u64,
        prior_attempts: u32,
        now: Time,
        rng: &mut R,
    ) -> Result<TxOutcome> {
        if !topology.is_adjacent(sender, receiver) {
            return Err(SimError::NotAdjacent(sender, receiver));
        }
        assert!(packet_bits > 0, "empty frame");

        if self.is_busy(sender, now) || self.is_busy(receiver, now) {
            self.nodes[sender].retransmissions += 1;
            let attempt = prior_attempts + 1;
            if attempt > self.config.max_retries {
                self.mac_drops += 1;
                return Ok(TxOutcome::Drop);
            }
            let mean = self.config.backoff_mean * f64::from(1u32 << (attempt - 1).min(20));
            let wait = Exp::new(1.0 / mean)
                .expect("positive backoff mean")
                .sample(rng);
            return Ok(TxOutcome::Retry {
                retry_at: now + wait,
                attempt,
            });
        }

        let end = now + self.airtime(packet_bits);
        let mut heard: Vec<NodeId> = topology
            .neighbors(sender)
            .iter()
            .chain(topology.neighbors(receiver))
            .copied()
            .collect();
        heard.push(sender);
        heard.push(receiver);
        heard.sort_unstable();
        heard.dedup();
        for &n in &heard {
            self.mark_busy(n, now, end);
            if n != sender {
                self.nodes[n].rts_cts += 1;
            }
        }
        if let Some(log) = self.log.as_mut() {
            log.push(TxRecord {
                sender,
                receiver,
                start: now,
                end,
            });
        }
        Ok(TxOutcome::Delivered { delivery_time: end })
    }

    /// Signals accumulated since the previous sample of `node`, which must have
    /// been `window` seconds before `now`. Counters restart afterwards.
    pub fn sample_signals(&mut self, node: NodeId, now: Time, window: f64) -> MacSignals {
        assert!(window > 0.0, "sampling window must be positive");
        let c = &mut self.nodes[node];
        let overhang = (c.busy_until - now).max(0.0);
        let busy = (c.busy_accum - overhang).max(0.0);
        let signals = MacSignals {
            rts_cts_frequency: c.rts_cts as f64 / window,
            busy_fraction: (busy / window).clamp(0.0, 1.0),
            retransmission_count: c.retransmissions,
            window,
        };
        c.busy_accum = overhang;
        c.rts_cts = 0;
        c.retransmissions = 0;
        signals
    }
}
