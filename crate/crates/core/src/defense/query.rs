//! Bandwidth querying phase: REQUEST out along the forward path, REPLY back
//! along the reverse path reserving the bottleneck bandwidth hop by hop.

use crate::error::{Result, SimError};
use crate::routing::{compute_route, FlowId, Route};
use crate::topology::{NodeId, Topology};

use super::fmt::{FlowStatus, FlowTable, FmtEntry, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Request,
    Reply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageType {
    /// Reserving query of the flow-monitoring scheme.
    BandwidthQuery,
    /// Non-reserving admission probe (SWAN baseline).
    AdmissionProbe,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryPacket {
    pub direction: Direction,
    pub source_id: NodeId,
    pub destination_id: NodeId,
    pub message_type: MessageType,
    pub flow_id: FlowId,
    /// Bottleneck bandwidth seen so far, bits per second.
    pub bnbw: f64,
}

impl QueryPacket {
    /// The destination turns a REQUEST around unchanged.
    pub fn into_reply(self) -> Self {
        debug_assert_eq!(self.direction, Direction::Request);
        Self {
            direction: Direction::Reply,
            ..self
        }
    }
}

/// Build the REQUEST for a new flow and the route it will travel.
pub fn initiate_query(
    flow_id: FlowId,
    source: NodeId,
    destination: NodeId,
    requested_rate: f64,
    message_type: MessageType,
    topology: &Topology,
) -> Result<(QueryPacket, Route)> {
    if !(requested_rate > 0.0) {
        return Err(SimError::InvalidRate(requested_rate));
    }
    let route = compute_route(flow_id, source, destination, topology)?;
    Ok((
        QueryPacket {
            direction: Direction::Request,
            source_id: source,
            destination_id: destination,
            message_type,
            flow_id,
            bnbw: requested_rate,
        },
        route,
    ))
}

/// One reverse-path hop of a REPLY at the node owning `table`.
///
/// Clips BnBW to the node's available bandwidth, reserves the result for the
/// flow's in-out stream and creates the FMT row if the stream was inactive.
/// An already active stream keeps its assigned rate and only accumulates
/// reservation. A rejected stream gets nothing.
pub fn process_reply(table: &mut FlowTable, route: &Route, reply: QueryPacket) -> QueryPacket {
    debug_assert_eq!(reply.direction, Direction::Reply);
    let rejected = table
        .entries()
        .any(|e| e.key.flow_id == reply.flow_id && e.status == FlowStatus::Rejected);
    if rejected && reply.message_type == MessageType::BandwidthQuery {
        return QueryPacket { bnbw: 0.0, ..reply };
    }
    let abw = table.available_bandwidth();
    let bnbw = if abw >= reply.bnbw { reply.bnbw } else { abw };
    let out = QueryPacket { bnbw, ..reply };
    if reply.message_type == MessageType::AdmissionProbe || bnbw <= 0.0 {
        return out;
    }

    let (upstream, downstream) = route
        .stream_at(table.node)
        .expect("reply visits only path nodes");
    let key = StreamKey {
        flow_id: reply.flow_id,
        upstream,
        downstream,
    };
    let active = table.entry(&key).is_some_and(FmtEntry::is_active);
    if !active {
        table.insert(FmtEntry::new(key, reply.source_id, reply.destination_id, bnbw));
    }
    table.reserve(&key, bnbw);
    table.allocate();
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Establishment {
    /// The source starts sending at `rate`.
    Started { rate: f64 },
    /// Nothing granted; the caller releases whatever the query reserved.
    Rejected,
}

pub fn establish_flow(requested_rate: f64, final_reply: &QueryPacket) -> Establishment {
    if final_reply.bnbw > 0.0 {
        Establishment::Started {
            rate: requested_rate.min(final_reply.bnbw),
        }
    } else {
        Establishment::Rejected
    }
}

/// SWAN-style admission on a probe that has completed its round trip.
pub fn admit(requested_rate: f64, path_min_abw: f64) -> bool {
    path_min_abw >= requested_rate
}
