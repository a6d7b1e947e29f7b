//! Stateless comparison scheme: probe-based admission plus AIMD shaping at
//! the source. It has no notion of an attacker.

use crate::routing::FlowId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwanParams {
    /// Additive increase per uncongested interval, bits per second.
    pub increment_bps: f64,
    /// Multiplicative decrease fraction per congested interval.
    pub decrease_fraction: f64,
}

impl Default for SwanParams {
    fn default() -> Self {
        Self {
            increment_bps: 5_000.0,
            decrease_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwanSourceState {
    pub flow_id: FlowId,
    pub shaped_rate: f64,
    pub increment: f64,
    pub decrease_fraction: f64,
    /// The application never offers more than this.
    pub ceiling: f64,
}

impl SwanSourceState {
    pub fn new(flow_id: FlowId, rate: f64, params: &SwanParams) -> Self {
        Self {
            flow_id,
            shaped_rate: rate,
            increment: params.increment_bps,
            decrease_fraction: params.decrease_fraction,
            ceiling: rate,
        }
    }
}

/// One AIMD step, run once per interval.
pub fn swan_rate_control(state: &mut SwanSourceState, congested: bool) -> f64 {
    state.shaped_rate = if congested {
        state.shaped_rate * (1.0 - state.decrease_fraction)
    } else {
        (state.shaped_rate + state.increment).min(state.ceiling)
    };
    state.shaped_rate = state.shaped_rate.max(0.0);
    state.shaped_rate
}
