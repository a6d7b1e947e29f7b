//! Flow-monitoring defense: bandwidth query and reservation, distributed rate
//! control, congestion feedback, and attacker detection and rejection.

mod feedback;
mod fmt;
mod query;

pub use feedback::{destination_feedback, propagate_fmt, CongestionNotice, FlowView, FmtRow, Verdict};
pub use fmt::{
    allocate_rates, apply_congestion_bit, classify_flow, detect_unresponsive_sender, measure_rate,
    Classification, FlowStatus, FlowTable, FmtEntry, NodeBandwidthState, RateEstimator, StreamKey,
};
pub use query::{
    admit, establish_flow, initiate_query, process_reply, Direction, Establishment, MessageType,
    QueryPacket,
};

use crate::mac::CongestionThresholds;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefenseParams {
    /// Rate reduction applied per congestion notice, bits per second.
    pub delta_bps: f64,
    /// Measurement interval T, seconds.
    pub interval_s: f64,
    /// Relative tolerance for "the rate did not change".
    pub epsilon_rel: f64,
    pub thresholds: CongestionThresholds,
    pub estimator: RateEstimator,
    /// Packets per interval a stream may exceed its ACR by before the
    /// measured-rate check calls it an attack.
    pub measurement_slack_packets: f64,
    /// Consecutive over-rate intervals before a relay rejects a flow.
    pub detection_intervals: u32,
    /// Consecutive unresponsive verdicts before a destination rejects a flow.
    pub unresponsive_strikes: u32,
}

impl Default for DefenseParams {
    fn default() -> Self {
        Self {
            delta_bps: 5_000.0,
            interval_s: 1.0,
            epsilon_rel: 0.05,
            thresholds: CongestionThresholds::default(),
            estimator: RateEstimator::MedianGap,
            measurement_slack_packets: 4.0,
            detection_intervals: 2,
            unresponsive_strikes: 3,
        }
    }
}
