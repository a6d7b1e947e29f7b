//! Destination-side feedback: congestion notices, piggybacked FMT rows and
//! the unresponsive-sender check.

use std::collections::{BTreeMap, VecDeque};

use crate::mac::{congestion_detected, CongestionThresholds, MacSignals};
use crate::routing::FlowId;
use crate::sim::Time;
use crate::topology::NodeId;

use super::fmt::{detect_unresponsive_sender, FlowStatus, FmtEntry};

#[derive(Debug, Clone, PartialEq)]
pub struct CongestionNotice {
    pub destination: NodeId,
    pub flow_ids: Vec<FlowId>,
    pub congestion_bit: bool,
    pub issue_time: Time,
}

/// One notice covering every active flow that ends here, or nothing if the
/// channel is not congested.
pub fn destination_feedback(
    destination: NodeId,
    signals: &MacSignals,
    thresholds: &CongestionThresholds,
    inbound: &[(FlowId, FlowStatus)],
    now: Time,
) -> Option<CongestionNotice> {
    if !congestion_detected(signals, thresholds) {
        return None;
    }
    let flow_ids: Vec<FlowId> = inbound
        .iter()
        .filter(|(_, s)| *s == FlowStatus::Active)
        .map(|(f, _)| *f)
        .collect();
    (!flow_ids.is_empty()).then(|| CongestionNotice {
        destination,
        flow_ids,
        congestion_bit: true,
        issue_time: now,
    })
}

/// The slice of an FMT entry that rides on data packets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmtRow {
    pub node: NodeId,
    /// Tick index whose interval produced `sending_rate`.
    pub interval: u64,
    pub sending_rate: f64,
    pub previous_sending_rate: f64,
    pub assigned_rate: f64,
    pub actual_rate: f64,
}

impl FmtRow {
    pub fn from_entry(node: NodeId, e: &FmtEntry) -> Self {
        Self {
            node,
            interval: e.interval,
            sending_rate: e.sending_rate,
            previous_sending_rate: e.previous_sending_rate,
            assigned_rate: e.assigned_rate,
            actual_rate: e.actual_rate,
        }
    }
}

/// Stamp the forwarding node's row onto a departing data packet.
pub fn propagate_fmt(rows: &mut Vec<FmtRow>, node: NodeId, local: &FmtEntry) {
    let row = FmtRow::from_entry(node, local);
    match rows.iter_mut().find(|r| r.node == node) {
        Some(slot) => *slot = row,
        None => rows.push(row),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PendingCheck {
    notice_tick: u64,
    /// AR reported by the reference node before the notice went out.
    assigned_before: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Rate dropped after the notice.
    Responsive,
    /// Rate held steady through the notice.
    Unresponsive,
    /// Not enough fresh data to judge this notice.
    Skipped,
}

/// What a destination knows about one inbound flow.
#[derive(Debug, Clone, Default)]
pub struct FlowView {
    rows: BTreeMap<NodeId, FmtRow>,
    pending: VecDeque<PendingCheck>,
}

impl FlowView {
    pub fn latest(&self, node: NodeId) -> Option<&FmtRow> {
        self.rows.get(&node)
    }

    /// Keep the freshest row per node.
    pub fn absorb(&mut self, rows: &[FmtRow]) {
        for r in rows {
            match self.rows.get(&r.node) {
                Some(old) if old.interval > r.interval => {}
                _ => {
                    self.rows.insert(r.node, *r);
                }
            }
        }
    }

    /// Remember that a notice left at `tick`; `reference` is the node whose rows
    /// will be compared (the first relay after the source).
    pub fn notice_sent(&mut self, tick: u64, reference: NodeId) {
        let Some(row) = self.rows.get(&reference) else {
            return;
        };
        self.pending.push_back(PendingCheck {
            notice_tick: tick,
            assigned_before: row.assigned_rate,
        });
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Judge pending notices against the reference node's freshest row.
    ///
    /// A notice sent at tick `c` is judged on the row for interval `c + 1`:
    /// its previous rate covers the interval before the notice and its current
    /// rate the interval right after it. The check only runs if the row shows
    /// the notice reached the reference node (its AR went down).
    pub fn evaluate(&mut self, reference: NodeId, epsilon: f64) -> Vec<Verdict> {
        let Some(row) = self.rows.get(&reference).copied() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        while let Some(p) = self.pending.front().copied() {
            if row.interval <= p.notice_tick {
                break;
            }
            self.pending.pop_front();
            if row.interval != p.notice_tick + 1 || row.assigned_rate >= p.assigned_before {
                out.push(Verdict::Skipped);
                continue;
            }
            let verdict = match detect_unresponsive_sender(
                row.previous_sending_rate,
                row.sending_rate,
                epsilon,
            ) {
                Ok(true) => Verdict::Unresponsive,
                Ok(false) => Verdict::Responsive,
                Err(_) => Verdict::Skipped,
            };
            out.push(verdict);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defense::fmt::StreamKey;

    fn row(node: NodeId, interval: u64, prev: f64, cur: f64, ar: f64) -> FmtRow {
        FmtRow {
            node,
            interval,
            sending_rate: cur,
            previous_sending_rate: prev,
            assigned_rate: ar,
            actual_rate: ar,
        }
    }

    #[test]
    fn congested_destination_notifies_all_active_flows() {
        let s = MacSignals {
            busy_fraction: 0.9,
            ..Default::default()
        };
        let inbound = [
            (1, FlowStatus::Active),
            (2, FlowStatus::Active),
            (3, FlowStatus::Active),
        ];
        let n = destination_feedback(7, &s, &CongestionThresholds::default(), &inbound, 4.0).unwrap();
        assert_eq!(n.flow_ids, vec![1, 2, 3]);
        assert!(n.congestion_bit);
        assert_eq!(n.issue_time, 4.0);
    }

    #[test]
    fn quiet_destination_stays_silent() {
        let inbound = [(1, FlowStatus::Active)];
        assert!(destination_feedback(
            7,
            &MacSignals::default(),
            &CongestionThresholds::default(),
            &inbound,
            1.0
        )
        .is_none());
    }

    #[test]
    fn rejected_flows_are_not_notified() {
        let s = MacSignals {
            busy_fraction: 0.9,
            ..Default::default()
        };
        let inbound = [(1, FlowStatus::Active), (2, FlowStatus::Rejected)];
        let n = destination_feedback(7, &s, &CongestionThresholds::default(), &inbound, 1.0).unwrap();
        assert_eq!(n.flow_ids, vec![1]);
    }

    #[test]
    fn propagate_copies_the_local_row() {
        let mut e = FmtEntry::new(
            StreamKey {
                flow_id: 1,
                upstream: Some(0),
                downstream: Some(2),
            },
            0,
            2,
            500_000.0,
        );
        e.sending_rate = 500_000.0;
        let mut rows = Vec::new();
        propagate_fmt(&mut rows, 1, &e);
        propagate_fmt(&mut rows, 1, &e);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].sending_rate, 500_000.0);
    }

    #[test]
    fn steady_rate_after_notice_is_unresponsive() {
        let mut v = FlowView::default();
        v.absorb(&[row(1, 4, 500_000.0, 500_000.0, 500_000.0)]);
        v.notice_sent(5, 1);
        // Row for interval 5 is not enough.
        v.absorb(&[row(1, 5, 500_000.0, 500_000.0, 495_000.0)]);
        assert!(v.evaluate(1, 0.05).is_empty());
        v.absorb(&[row(1, 6, 500_000.0, 500_000.0, 495_000.0)]);
        assert_eq!(v.evaluate(1, 0.05), vec![Verdict::Unresponsive]);
        assert!(!v.has_pending());
    }

    #[test]
    fn reduced_rate_is_responsive() {
        let mut v = FlowView::default();
        v.absorb(&[row(1, 4, 50_000.0, 50_000.0, 50_000.0)]);
        v.notice_sent(4, 1);
        v.absorb(&[row(1, 5, 50_000.0, 45_000.0, 45_000.0)]);
        assert_eq!(v.evaluate(1, 0.05), vec![Verdict::Responsive]);
    }

    #[test]
    fn notice_that_never_arrived_is_skipped() {
        let mut v = FlowView::default();
        v.absorb(&[row(1, 4, 50_000.0, 50_000.0, 50_000.0)]);
        v.notice_sent(4, 1);
        v.absorb(&[row(1, 5, 50_000.0, 50_000.0, 50_000.0)]);
        assert_eq!(v.evaluate(1, 0.05), vec![Verdict::Skipped]);
    }

    #[test]
    fn stale_or_missing_rows_skip() {
        let mut v = FlowView::default();
        v.notice_sent(4, 1);
        assert!(!v.has_pending());
        v.absorb(&[row(1, 4, 1.0, 1.0, 1.0)]);
        v.notice_sent(4, 1);
        v.absorb(&[row(1, 7, 1.0, 1.0, 0.5)]);
        assert_eq!(v.evaluate(1, 0.05), vec![Verdict::Skipped]);
        // Older rows never replace newer ones.
        v.absorb(&[row(1, 6, 9.0, 9.0, 9.0)]);
        assert_eq!(v.latest(1).unwrap().interval, 7);
    }
}
