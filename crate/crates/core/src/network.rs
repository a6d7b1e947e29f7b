//! The simulated network: nodes with queues and MAC state, flows, control
//! packets, and the per-interval defense machinery, all driven by one
//! discrete-event scheduler.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::defense::{
    admit, allocate_rates, apply_congestion_bit, classify_flow, destination_feedback, establish_flow,
    initiate_query, process_reply, propagate_fmt, Classification, Direction, Establishment, FlowStatus,
    FlowTable, FlowView, FmtRow, MessageType, QueryPacket, StreamKey, Verdict,
};
use crate::error::{Result, SimError};
use crate::mac::{congestion_detected, ChannelState, MacSignals, TxOutcome, TxRecord};
use crate::metrics::{DropCause, MetricsLog};
use crate::routing::{compute_route, FlowId, Route, RouteChange, RouteTable};
use crate::scenario::{Scenario, Scheme};
use crate::sim::{stream_rng, Scheduler, Time};
use crate::swan::{swan_rate_control, SwanSourceState};
use crate::topology::{NodeId, Topology};
use crate::traffic::{next_packet_time, FlowSpec};

/// RNG stream labels below this are reserved for placement and flow choice.
pub const NODE_STREAM_BASE: u64 = 1_000;

#[derive(Debug, Clone)]
enum Payload {
    Data { rows: Vec<FmtRow> },
    Request(QueryPacket),
    Reply(QueryPacket),
    Notice,
    Reject { source: NodeId },
}

#[derive(Debug, Clone)]
struct Packet {
    flow: FlowId,
    payload: Payload,
    bits: u64,
    path: Rc<[NodeId]>,
    /// Index into `path` of the node holding the packet.
    hop: usize,
    /// Query round the packet belongs to; only meaningful for queries.
    epoch: u32,
}

impl Packet {
    fn next_hop(&self) -> NodeId {
        self.path[self.hop + 1]
    }

    fn at_end(&self) -> bool {
        self.hop + 1 == self.path.len()
    }

    fn is_data(&self) -> bool {
        matches!(self.payload, Payload::Data { .. })
    }
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    FlowStart(FlowId),
    Generate { flow: FlowId, epoch: u32 },
    MacAttempt(NodeId),
    TxEnd(NodeId),
    Tick,
    QueryTimeout { flow: FlowId, epoch: u32 },
    LinkBreak { u: NodeId, v: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowPhase {
    Waiting,
    Querying,
    Active,
    /// Admission refused; the flow never sends.
    Denied,
    /// No route, or the query never came back.
    Failed,
    Rejected,
}

#[derive(Debug, Clone)]
struct FlowState {
    spec: FlowSpec,
    phase: FlowPhase,
    rate: f64,
    gen_epoch: u32,
    query_epoch: u32,
    query_attempt: u32,
    swan: Option<SwanSourceState>,
    notified: bool,
}

struct NodeState {
    data: VecDeque<Packet>,
    control: VecDeque<Packet>,
    /// Frame at the head of the MAC and its deferred attempts so far.
    current: Option<(Packet, u32)>,
    table: FlowTable,
    rng: ChaCha8Rng,
    last_reject_sent: BTreeMap<NodeId, Time>,
    /// Channel-estimated spare capacity, used by admission probes.
    probe_abw: f64,
}

/// One application of the rate-control equations, for after-the-fact checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceRecord {
    Allocate {
        time: Time,
        node: NodeId,
        flow: FlowId,
        weight: f64,
        assigned: f64,
        actual: f64,
    },
    Decrease {
        time: Time,
        node: NodeId,
        flow: FlowId,
        actual_before: f64,
        delta: f64,
        assigned_after: f64,
    },
    /// MAC signals sampled at a flow destination.
    Signals {
        time: Time,
        node: NodeId,
        signals: MacSignals,
        congested: bool,
    },
    Measure {
        time: Time,
        node: NodeId,
        flow: FlowId,
        counter_bits: f64,
        period: f64,
        measured: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorldOptions {
    pub trace: bool,
    pub tx_log: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: MetricsLog,
    pub flows: Vec<FlowSpec>,
    pub phases: Vec<FlowPhase>,
    /// Data packets still queued or at a MAC when the run stopped, per flow.
    pub in_flight: Vec<u64>,
    pub control_dropped: u64,
    pub trace: Vec<TraceRecord>,
    pub tx_log: Vec<TxRecord>,
    pub tables: Vec<FlowTable>,
    /// Largest sum of reservations seen at any node over its capacity.
    pub peak_reservation_ratio: f64,
    pub events: u64,
}

pub struct World {
    sched: Scheduler<Ev>,
    scenario: Scenario,
    topo: Topology,
    channel: ChannelState,
    routes: RouteTable,
    nodes: Vec<NodeState>,
    flows: Vec<FlowState>,
    views: BTreeMap<FlowId, FlowView>,
    /// Consecutive over-rate intervals per relay stream.
    streaks: BTreeMap<(NodeId, StreamKey), u32>,
    /// Bits relayed this interval for streams with no reservation.
    unreserved: BTreeMap<(NodeId, StreamKey), f64>,
    /// Consecutive unresponsive verdicts per flow.
    strikes: BTreeMap<FlowId, u32>,
    metrics: MetricsLog,
    tick: u64,
    control_dropped: u64,
    trace: Option<Vec<TraceRecord>>,
    peak_reservation_ratio: f64,
}

impl World {
    pub fn new(scenario: &Scenario, topology: Topology, flows: Vec<FlowSpec>, options: WorldOptions) -> Result<Self> {
        let n = topology.len();
        if n != scenario.node_count {
            return Err(SimError::validation("node_count", "topology size differs from the scenario"));
        }
        for (i, f) in flows.iter().enumerate() {
            if f.flow_id != i {
                return Err(SimError::validation("flows", "flow ids must be 0..n in order"));
            }
            if f.source_id >= n || f.destination_id >= n || f.source_id == f.destination_id {
                return Err(SimError::validation("flows", format!("flow {i} has bad endpoints")));
            }
        }
        let mut channel = ChannelState::new(n, scenario.link_capacity_bps, scenario.mac_config);
        if options.tx_log {
            channel = channel.with_log();
        }
        let nodes = (0..n)
            .map(|i| NodeState {
                data: VecDeque::new(),
                control: VecDeque::new(),
                current: None,
                table: FlowTable::new(i, scenario.link_capacity_bps),
                rng: stream_rng(scenario.seed, NODE_STREAM_BASE + i as u64),
                last_reject_sent: BTreeMap::new(),
                probe_abw: scenario.link_capacity_bps,
            })
            .collect();
        let metrics = MetricsLog::new(
            flows.iter().map(|f| f.is_attacker).collect(),
            scenario.sim_time_s,
            scenario.bucket_width_s,
        );
        let mut sched = Scheduler::new();
        for f in &flows {
            sched.schedule(f.start_time, Ev::FlowStart(f.flow_id))?;
        }
        for b in &scenario.link_breaks {
            sched.schedule(b.time_s, Ev::LinkBreak { u: b.u, v: b.v })?;
        }
        if scenario.defense.interval_s <= scenario.sim_time_s {
            sched.schedule(scenario.defense.interval_s, Ev::Tick)?;
        }
        Ok(Self {
            sched,
            scenario: scenario.clone(),
            topo: topology,
            channel,
            routes: RouteTable::new(),
            nodes,
            flows: flows
                .into_iter()
                .map(|spec| FlowState {
                    spec,
                    phase: FlowPhase::Waiting,
                    rate: 0.0,
                    gen_epoch: 0,
                    query_epoch: 0,
                    query_attempt: 0,
                    swan: None,
                    notified: false,
                })
                .collect(),
            views: BTreeMap::new(),
            streaks: BTreeMap::new(),
            strikes: BTreeMap::new(),
            unreserved: BTreeMap::new(),
            metrics,
            tick: 0,
            control_dropped: 0,
            trace: options.trace.then(Vec::new),
            peak_reservation_ratio: 0.0,
        })
    }

    pub fn run(mut self) -> Result<RunResult> {
        let end = self.scenario.sim_time_s;
        while let Some(ev) = self.sched.pop_until(end) {
            self.handle(ev.kind);
        }
        self.sched.set_clock(end);

        let mut in_flight = vec![0u64; self.flows.len()];
        for node in &self.nodes {
            let queued = node.data.iter().chain(node.current.iter().map(|(p, _)| p));
            for p in queued.filter(|p| p.is_data()) {
                in_flight[p.flow] += 1;
            }
        }
        Ok(RunResult {
            phases: self.flows.iter().map(|f| f.phase).collect(),
            flows: self.flows.into_iter().map(|f| f.spec).collect(),
            metrics: self.metrics,
            in_flight,
            control_dropped: self.control_dropped,
            trace: self.trace.unwrap_or_default(),
            tx_log: self.channel.log().to_vec(),
            tables: self.nodes.into_iter().map(|n| n.table).collect(),
            peak_reservation_ratio: self.peak_reservation_ratio,
            events: self.sched.fired(),
        })
    }

    fn now(&self) -> Time {
        self.sched.now()
    }

    fn at(&mut self, t: Time, ev: Ev) {
        if t <= self.scenario.sim_time_s {
            self.sched.schedule(t, ev).expect("events are never scheduled in the past");
        }
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::FlowStart(flow) => self.start_flow(flow),
            Ev::Generate { flow, epoch } => self.generate(flow, epoch),
            Ev::MacAttempt(node) => {
                if !self.attempt(node) {
                    self.kick(node);
                }
            }
            Ev::TxEnd(node) => {
                let (pkt, _) = self.nodes[node].current.take().expect("a frame was on the air");
                let next = pkt.next_hop();
                self.kick(node);
                self.receive(next, pkt);
            }
            Ev::Tick => self.on_tick(),
            Ev::QueryTimeout { flow, epoch } => self.query_timeout(flow, epoch),
            Ev::LinkBreak { u, v } => self.link_break(u, v),
        }
    }

    fn record(&mut self, r: TraceRecord) {
        if let Some(t) = self.trace.as_mut() {
            t.push(r);
        }
    }

    // ---- MAC and queues ----

    fn enqueue(&mut self, node: NodeId, pkt: Packet) {
        let now = self.now();
        let limit = self.scenario.queue_limit_packets;
        let ns = &mut self.nodes[node];
        if pkt.is_data() {
            if ns.data.len() >= limit {
                self.metrics.record_drop(pkt.flow, now, DropCause::Queue);
                return;
            }
            ns.data.push_back(pkt);
        } else {
            ns.control.push_back(pkt);
        }
        self.kick(node);
    }

    fn lose(&mut self, pkt: &Packet, cause: DropCause) {
        if pkt.is_data() {
            let now = self.now();
            self.metrics.record_drop(pkt.flow, now, cause);
        } else {
            self.control_dropped += 1;
        }
    }

    /// Start the next frame if the MAC is idle.
    fn kick(&mut self, node: NodeId) {
        loop {
            let ns = &mut self.nodes[node];
            if ns.current.is_some() {
                return;
            }
            let Some(pkt) = ns.control.pop_front().or_else(|| ns.data.pop_front()) else {
                return;
            };
            if pkt.is_data() && pkt.hop > 0 && ns.table.blocks(self.flows[pkt.flow].spec.source_id) {
                self.lose(&pkt, DropCause::Rejected);
                continue;
            }
            ns.current = Some((pkt, 0));
            if self.attempt(node) {
                return;
            }
        }
    }

    /// Try to put the current frame on the air. False if it was dropped.
    fn attempt(&mut self, node: NodeId) -> bool {
        let now = self.now();
        {
            let (pkt, _) = self.nodes[node].current.as_ref().expect("attempt without a frame");
            let source = self.flows[pkt.flow].spec.source_id;
            // A neighbour holding a drop rule for the source never answers the
            // RTS, so the data frame is not sent.
            if pkt.is_data() && self.nodes[pkt.next_hop()].table.blocks(source) {
                let (pkt, _) = self.nodes[node].current.take().expect("frame present");
                self.lose(&pkt, DropCause::Rejected);
                return false;
            }
        }
        let ns = &mut self.nodes[node];
        let (pkt, prior) = ns.current.as_ref().expect("attempt without a frame");
        let outcome = self.channel.begin_transmission(
            &self.topo,
            node,
            pkt.next_hop(),
            pkt.bits,
            *prior,
            now,
            &mut ns.rng,
        );
        match outcome {
            Ok(TxOutcome::Delivered { delivery_time }) => {
                self.sched
                    .schedule(delivery_time, Ev::TxEnd(node))
                    .expect("delivery lies in the future");
                true
            }
            Ok(TxOutcome::Retry { retry_at, attempt }) => {
                ns.current.as_mut().expect("frame present").1 = attempt;
                self.sched
                    .schedule(retry_at, Ev::MacAttempt(node))
                    .expect("backoff lies in the future");
                true
            }
            Ok(TxOutcome::Drop) | Err(_) => {
                let (pkt, _) = ns.current.take().expect("frame present");
                self.lose(&pkt, DropCause::Mac);
                false
            }
        }
    }

    // ---- packet arrival ----

    fn receive(&mut self, node: NodeId, mut pkt: Packet) {
        pkt.hop += 1;
        debug_assert_eq!(pkt.path[pkt.hop], node);
        let payload = std::mem::replace(&mut pkt.payload, Payload::Notice);
        match payload {
            Payload::Data { rows } => self.receive_data(node, pkt, rows),
            Payload::Request(q) => {
                if !self.query_current(pkt.flow, pkt.epoch) {
                    return;
                }
                if pkt.at_end() {
                    let route = self.routes.get(pkt.flow).expect("querying flows have a route").clone();
                    let reply = Packet {
                        flow: pkt.flow,
                        payload: Payload::Reply(q.into_reply()),
                        bits: pkt.bits,
                        path: route.reverse_path.clone(),
                        hop: 0,
                        epoch: pkt.epoch,
                    };
                    self.reply_at(node, reply);
                } else {
                    pkt.payload = Payload::Request(q);
                    self.enqueue(node, pkt);
                }
            }
            Payload::Reply(q) => {
                pkt.payload = Payload::Reply(q);
                self.reply_at(node, pkt);
            }
            Payload::Notice => {
                if self.scenario.scheme == Scheme::Proposed {
                    self.decrease_at(node, pkt.flow);
                }
                if pkt.at_end() {
                    self.notice_at_source(pkt.flow);
                } else {
                    self.enqueue(node, pkt);
                }
            }
            Payload::Reject { source } => {
                if node != source {
                    self.nodes[node].table.install_drop_rule(source);
                }
                if !pkt.at_end() {
                    pkt.payload = Payload::Reject { source };
                    self.enqueue(node, pkt);
                }
            }
        }
    }

    fn receive_data(&mut self, node: NodeId, mut pkt: Packet, mut rows: Vec<FmtRow>) {
        let now = self.now();
        let flow = pkt.flow;
        let source = self.flows[flow].spec.source_id;
        if self.nodes[node].table.blocks(source) {
            self.metrics.record_drop(flow, now, DropCause::Rejected);
            self.resend_reject(node, &pkt);
            return;
        }
        let proposed = self.scenario.scheme == Scheme::Proposed;
        if proposed {
            let key = StreamKey {
                flow_id: flow,
                upstream: Some(pkt.path[pkt.hop - 1]),
                downstream: pkt.path.get(pkt.hop + 1).copied(),
            };
            match self.nodes[node].table.entry_mut(&key) {
                Some(e) => {
                    e.count(pkt.bits as f64, now);
                    if !pkt.at_end() {
                        propagate_fmt(&mut rows, node, e);
                    }
                }
                None if !pkt.at_end() => *self.unreserved.entry((node, key)).or_insert(0.0) += pkt.bits as f64,
                None => {}
            }
        }
        if !pkt.at_end() {
            pkt.payload = Payload::Data { rows };
            self.enqueue(node, pkt);
            return;
        }

        self.metrics.record_delivered(flow, now, pkt.bits);
        if !proposed || pkt.path.len() < 3 || self.flows[flow].phase != FlowPhase::Active {
            return;
        }
        let reference = pkt.path[1];
        let eps = self.scenario.defense.epsilon_rel;
        let view = self.views.entry(flow).or_default();
        view.absorb(&rows);
        let needed = self.scenario.defense.unresponsive_strikes;
        let strikes = self.strikes.entry(flow).or_insert(0);
        let mut guilty = false;
        for v in view.evaluate(reference, eps) {
            match v {
                Verdict::Unresponsive => *strikes += 1,
                Verdict::Responsive => *strikes = 0,
                Verdict::Skipped => {}
            }
            guilty |= *strikes >= needed;
        }
        if guilty {
            self.reject_flow(flow, node);
        }
    }

    // ---- flow set-up ----

    fn start_flow(&mut self, flow: FlowId) {
        self.flows[flow].query_attempt = 0;
        match self.scenario.scheme {
            Scheme::None => {
                let spec = &self.flows[flow].spec;
                match compute_route(flow, spec.source_id, spec.destination_id, &self.topo) {
                    Ok(route) => {
                        self.routes.insert(route);
                        let rate = self.flows[flow].spec.data_rate;
                        self.activate(flow, rate);
                    }
                    Err(_) => self.flows[flow].phase = FlowPhase::Failed,
                }
            }
            Scheme::Proposed | Scheme::Swan => self.start_query(flow),
        }
    }

    fn start_query(&mut self, flow: FlowId) {
        let now = self.now();
        let msg = match self.scenario.scheme {
            Scheme::Swan => MessageType::AdmissionProbe,
            _ => MessageType::BandwidthQuery,
        };
        let spec = &self.flows[flow].spec;
        let (query, route) =
            match initiate_query(flow, spec.source_id, spec.destination_id, spec.requested_rate, msg, &self.topo) {
                Ok(x) => x,
                Err(_) => {
                    self.flows[flow].phase = FlowPhase::Failed;
                    return;
                }
            };
        let f = &mut self.flows[flow];
        f.phase = FlowPhase::Querying;
        f.gen_epoch += 1;
        f.query_epoch += 1;
        let epoch = f.query_epoch;
        let pkt = Packet {
            flow,
            payload: Payload::Request(query),
            bits: u64::from(self.scenario.control_packet_bytes) * 8,
            path: route.forward_path.clone(),
            hop: 0,
            epoch,
        };
        self.routes.insert(route);
        self.at(now + self.scenario.query_timeout_s, Ev::QueryTimeout { flow, epoch });
        self.enqueue(pkt.path[0], pkt);
    }

    fn query_current(&self, flow: FlowId, epoch: u32) -> bool {
        let f = &self.flows[flow];
        f.phase == FlowPhase::Querying && f.query_epoch == epoch
    }

    /// A REPLY (or probe answer) at one node of the reverse path.
    fn reply_at(&mut self, node: NodeId, mut pkt: Packet) {
        if !self.query_current(pkt.flow, pkt.epoch) {
            return;
        }
        let Payload::Reply(q) = pkt.payload else {
            unreachable!("reply_at takes replies")
        };
        let route = self.routes.get(pkt.flow).expect("querying flows have a route").clone();
        let q = match q.message_type {
            MessageType::BandwidthQuery => {
                let table = &mut self.nodes[node].table;
                let out = process_reply(table, &route, q);
                let ratio = table.reserved_total() / table.link_capacity();
                self.peak_reservation_ratio = self.peak_reservation_ratio.max(ratio);
                self.trace_allocation(node);
                out
            }
            MessageType::AdmissionProbe => QueryPacket {
                bnbw: q.bnbw.min(self.nodes[node].probe_abw),
                ..q
            },
        };
        if pkt.at_end() {
            self.complete_query(pkt.flow, &route, q);
        } else {
            pkt.payload = Payload::Reply(q);
            self.enqueue(node, pkt);
        }
    }

    fn complete_query(&mut self, flow: FlowId, route: &Route, reply: QueryPacket) {
        debug_assert_eq!(reply.direction, Direction::Reply);
        let spec = self.flows[flow].spec.clone();
        let granted = match reply.message_type {
            MessageType::BandwidthQuery => match establish_flow(spec.requested_rate, &reply) {
                Establishment::Started { rate } => Some(rate),
                Establishment::Rejected => {
                    self.forget_path(flow, route);
                    None
                }
            },
            MessageType::AdmissionProbe => admit(spec.requested_rate, reply.bnbw).then_some(spec.data_rate),
        };
        match (granted, spec.is_attacker) {
            // An attacker floods whatever it was granted.
            (_, true) => self.activate(flow, spec.data_rate),
            (Some(rate), false) => self.activate(flow, rate),
            (None, false) => self.flows[flow].phase = FlowPhase::Denied,
        }
    }

    fn query_timeout(&mut self, flow: FlowId, epoch: u32) {
        if !self.query_current(flow, epoch) {
            return;
        }
        if let Some(route) = self.routes.get(flow).cloned() {
            self.forget_path(flow, &route);
        }
        self.flows[flow].query_attempt += 1;
        if self.flows[flow].query_attempt < self.scenario.query_attempts {
            self.start_query(flow);
        } else if self.flows[flow].spec.is_attacker {
            let rate = self.flows[flow].spec.data_rate;
            self.activate(flow, rate);
        } else {
            self.flows[flow].phase = FlowPhase::Failed;
        }
    }

    fn forget_path(&mut self, flow: FlowId, route: &Route) {
        for &n in route.forward_path.iter() {
            self.nodes[n].table.forget_flow(flow);
        }
    }

    fn activate(&mut self, flow: FlowId, rate: f64) {
        let now = self.now();
        let swan = self.scenario.swan;
        let f = &mut self.flows[flow];
        f.phase = FlowPhase::Active;
        f.rate = rate;
        f.gen_epoch += 1;
        if self.scenario.scheme == Scheme::Swan && !f.spec.is_attacker {
            f.swan = Some(SwanSourceState::new(flow, rate, &swan));
            f.notified = false;
        }
        let epoch = f.gen_epoch;
        self.at(now, Ev::Generate { flow, epoch });
    }

    fn generate(&mut self, flow: FlowId, epoch: u32) {
        let now = self.now();
        let f = &self.flows[flow];
        // A rejected source is never told; it keeps transmitting into the drop rule.
        if f.gen_epoch != epoch || !matches!(f.phase, FlowPhase::Active | FlowPhase::Rejected) {
            return;
        }
        let Some(route) = self.routes.get(flow) else {
            return;
        };
        let path = route.forward_path.clone();
        let bits = f.spec.packet_bits();
        let next = next_packet_time(&f.spec, f.rate, now);

        self.metrics.record_sent(flow, now);
        if self.scenario.scheme == Scheme::Proposed {
            let key = StreamKey {
                flow_id: flow,
                upstream: None,
                downstream: Some(path[1]),
            };
            if let Some(e) = self.nodes[path[0]].table.entry_mut(&key) {
                e.count(bits as f64, now);
            }
        }
        let pkt = Packet {
            flow,
            payload: Payload::Data { rows: Vec::new() },
            bits,
            path,
            hop: 0,
            epoch: 0,
        };
        self.enqueue(pkt.path[0], pkt);
        // A zero rate pauses the source until something raises it again.
        if let Ok(t) = next {
            self.at(t, Ev::Generate { flow, epoch });
        }
    }

    // ---- rate control ----

    fn trace_allocation(&mut self, node: NodeId) {
        if self.trace.is_none() {
            return;
        }
        let now = self.now();
        let table = &self.nodes[node].table;
        let cap = table.link_capacity();
        let sum: f64 = table.entries().filter(|e| e.is_active()).map(|e| e.assigned_rate).sum();
        let weight = if sum > 0.0 { (cap / sum).min(1.0) } else { 1.0 };
        let recs: Vec<TraceRecord> = table
            .entries()
            .filter(|e| e.is_active())
            .map(|e| TraceRecord::Allocate {
                time: now,
                node,
                flow: e.key.flow_id,
                weight,
                assigned: e.assigned_rate,
                actual: e.actual_rate,
            })
            .collect();
        self.trace.as_mut().expect("checked").extend(recs);
    }

    /// One congestion bit at `node` for `flow`, then reallocation.
    fn decrease_at(&mut self, node: NodeId, flow: FlowId) {
        let now = self.now();
        let delta = self.scenario.defense.delta_bps;
        let table = &mut self.nodes[node].table;
        let Some(e) = table.flow_entry_mut(flow).filter(|e| e.is_active()) else {
            return;
        };
        let before = e.actual_rate;
        let after = apply_congestion_bit(e, delta);
        table.allocate();
        self.record(TraceRecord::Decrease {
            time: now,
            node,
            flow,
            actual_before: before,
            delta,
            assigned_after: after,
        });
        self.trace_allocation(node);
    }

    fn notice_at_source(&mut self, flow: FlowId) {
        let source = self.flows[flow].spec.source_id;
        match self.scenario.scheme {
            Scheme::Proposed => {
                let f = &self.flows[flow];
                if f.spec.is_attacker || f.phase != FlowPhase::Active {
                    return;
                }
                let Some(acr) = self.nodes[source].table.flow_entry(flow).map(|e| e.actual_rate) else {
                    return;
                };
                let f = &mut self.flows[flow];
                f.rate = acr;
            }
            Scheme::Swan => self.flows[flow].notified = true,
            Scheme::None => {}
        }
    }

    fn send_notice(&mut self, flow: FlowId, destination: NodeId) {
        let Some(route) = self.routes.get(flow).cloned() else {
            return;
        };
        if self.scenario.scheme == Scheme::Proposed {
            self.decrease_at(destination, flow);
            if route.forward_path.len() > 2 {
                let tick = self.tick;
                self.views.entry(flow).or_default().notice_sent(tick, route.forward_path[1]);
            }
        }
        let pkt = Packet {
            flow,
            payload: Payload::Notice,
            bits: u64::from(self.scenario.control_packet_bytes) * 8,
            path: route.reverse_path.clone(),
            hop: 0,
            epoch: 0,
        };
        self.enqueue(destination, pkt);
    }

    fn on_tick(&mut self) {
        self.tick += 1;
        let now = self.now();
        let period = self.scenario.defense.interval_s;
        let scheme = self.scenario.scheme;

        if scheme == Scheme::Proposed {
            self.measure_all(now, period);
        }

        let signals: Vec<MacSignals> = (0..self.nodes.len())
            .map(|i| self.channel.sample_signals(i, now, period))
            .collect();
        let cap = self.scenario.link_capacity_bps;
        for (ns, s) in self.nodes.iter_mut().zip(&signals) {
            ns.probe_abw = cap * (1.0 - s.busy_fraction);
        }

        if scheme == Scheme::Swan {
            for f in self.flows.iter_mut().filter(|f| f.phase == FlowPhase::Active) {
                if let Some(state) = f.swan.as_mut() {
                    f.rate = swan_rate_control(state, f.notified);
                    f.notified = false;
                }
            }
        }

        if scheme != Scheme::None {
            let mut inbound: BTreeMap<NodeId, Vec<(FlowId, FlowStatus)>> = BTreeMap::new();
            for f in &self.flows {
                let status = match f.phase {
                    FlowPhase::Active => FlowStatus::Active,
                    FlowPhase::Rejected => FlowStatus::Rejected,
                    _ => continue,
                };
                inbound.entry(f.spec.destination_id).or_default().push((f.spec.flow_id, status));
            }
            let thresholds = self.scenario.defense.thresholds;
            for (dest, list) in inbound {
                let congested = congestion_detected(&signals[dest], &thresholds);
                self.record(TraceRecord::Signals {
                    time: now,
                    node: dest,
                    signals: signals[dest],
                    congested,
                });
                if let Some(notice) = destination_feedback(dest, &signals[dest], &thresholds, &list, now) {
                    for flow in notice.flow_ids {
                        self.send_notice(flow, dest);
                    }
                }
            }
        }

        let next = (self.tick + 1) as f64 * period;
        if next <= self.scenario.sim_time_s + 1e-9 {
            self.at(next.min(self.scenario.sim_time_s), Ev::Tick);
        }
    }

    /// Close the interval at every node, check relays for excess traffic, and
    /// rerun the allocation.
    fn measure_all(&mut self, now: Time, period: f64) {
        let tick = self.tick;
        let estimator = self.scenario.defense.estimator;
        let slack = self.scenario.defense.measurement_slack_packets;
        let needed = self.scenario.defense.detection_intervals;
        let mut excess = Vec::new();
        let mut attacks = BTreeSet::new();
        let mut records = Vec::new();
        for (node, ns) in self.nodes.iter_mut().enumerate() {
            for e in ns.table.entries_mut().filter(|e| e.is_active()) {
                let counter = e.traffic_counter;
                let mr = e.close_interval(period, estimator, tick);
                records.push(TraceRecord::Measure {
                    time: now,
                    node,
                    flow: e.key.flow_id,
                    counter_bits: counter,
                    period,
                    measured: mr,
                });
                let relay = e.key.upstream.is_some() && e.key.downstream.is_some();
                if relay {
                    if mr > e.interval_acr {
                        excess.push(e.key.flow_id);
                    }
                    let bits = self.flows[e.key.flow_id].spec.packet_bits() as f64;
                    let allowance = e.interval_acr + slack * bits / period;
                    let streak = self.streaks.entry((node, e.key)).or_insert(0);
                    if classify_flow(mr, allowance) == Classification::Attack {
                        *streak += 1;
                        if *streak >= needed {
                            attacks.insert((e.key.flow_id, node));
                        }
                    } else {
                        *streak = 0;
                    }
                }
            }
            allocate_rates(ns.table.link_capacity(), ns.table.entries_mut());
            for e in ns.table.entries_mut() {
                e.interval_acr = e.actual_rate;
            }
        }
        // Traffic nobody reserved for is held to an ACR of zero.
        for ((node, key), bits) in std::mem::take(&mut self.unreserved) {
            let mr = bits / period;
            if mr > 0.0 {
                excess.push(key.flow_id);
            }
            let allowance = slack * self.flows[key.flow_id].spec.packet_bits() as f64 / period;
            let streak = self.streaks.entry((node, key)).or_insert(0);
            if classify_flow(mr, allowance) == Classification::Attack {
                *streak += 1;
                if *streak >= needed {
                    attacks.insert((key.flow_id, node));
                }
            } else {
                *streak = 0;
            }
        }
        if let Some(t) = self.trace.as_mut() {
            t.extend(records);
        }
        for node in 0..self.nodes.len() {
            self.trace_allocation(node);
        }
        for flow in excess {
            self.metrics.record_excess(flow, now);
        }
        for (flow, node) in attacks {
            self.reject_flow(flow, node);
        }
    }

    // ---- rejection ----

    /// Block every flow of `flow`'s source, starting at `detector`.
    fn reject_flow(&mut self, flow: FlowId, detector: NodeId) {
        if self.flows[flow].phase == FlowPhase::Rejected {
            return;
        }
        let now = self.now();
        let source = self.flows[flow].spec.source_id;
        let victims: Vec<FlowId> = self
            .flows
            .iter()
            .filter(|f| f.spec.source_id == source && f.phase == FlowPhase::Active)
            .map(|f| f.spec.flow_id)
            .collect();
        for f in victims {
            self.flows[f].phase = FlowPhase::Rejected;
            self.metrics.record_rejection(f, now);
            if let Some(route) = self.routes.get(f).cloned() {
                for &n in route.forward_path.iter() {
                    let table = &mut self.nodes[n].table;
                    table.release_flow(f);
                    for e in table.entries_mut().filter(|e| e.key.flow_id == f) {
                        e.reject();
                    }
                    table.allocate();
                }
            }
        }
        if detector != source {
            self.nodes[detector].table.install_drop_rule(source);
        }
        if let Some(route) = self.routes.get(flow).cloned() {
            if let Some(pos) = route.forward_path.iter().position(|&n| n == detector) {
                self.send_reject(detector, source, &route.forward_path[..=pos]);
            }
        }
    }

    /// Carry the drop rule from `from` back towards the source along `upstream`
    /// (a forward-path prefix ending at `from`).
    fn send_reject(&mut self, from: NodeId, source: NodeId, upstream: &[NodeId]) {
        let now = self.now();
        self.nodes[from].last_reject_sent.insert(source, now);
        // The first relay already holds the rule; nothing to tell the source.
        if upstream.len() <= 2 {
            return;
        }
        let path: Vec<NodeId> = upstream[1..].iter().rev().copied().collect();
        let pkt = Packet {
            flow: self.flows.iter().find(|f| f.spec.source_id == source).map_or(0, |f| f.spec.flow_id),
            payload: Payload::Reject { source },
            bits: u64::from(self.scenario.control_packet_bytes) * 8,
            path: path.into(),
            hop: 0,
            epoch: 0,
        };
        self.enqueue(from, pkt);
    }

    /// Packets from a blocked source still arrive: repeat the rule upstream,
    /// at most once per interval.
    fn resend_reject(&mut self, node: NodeId, pkt: &Packet) {
        let now = self.now();
        let source = self.flows[pkt.flow].spec.source_id;
        let period = self.scenario.defense.interval_s;
        if let Some(&last) = self.nodes[node].last_reject_sent.get(&source) {
            if now - last < period {
                return;
            }
        }
        let upstream: Vec<NodeId> = pkt.path[..=pkt.hop].to_vec();
        self.send_reject(node, source, &upstream);
    }

    // ---- topology change ----

    fn link_break(&mut self, u: NodeId, v: NodeId) {
        let changes = self.routes.on_link_break(&mut self.topo, u, v);
        for change in changes {
            let flow = change.flow_id();
            let old = match &change {
                RouteChange::Rerouted { old, .. } | RouteChange::Failed { old } => old.clone(),
            };
            let phase = self.flows[flow].phase;
            if phase != FlowPhase::Rejected {
                self.forget_path(flow, &old);
            }
            match change {
                RouteChange::Failed { .. } => {
                    if phase != FlowPhase::Rejected {
                        self.flows[flow].phase = FlowPhase::Failed;
                    }
                    self.flows[flow].gen_epoch += 1;
                }
                RouteChange::Rerouted { new, .. } => match phase {
                    FlowPhase::Rejected => {
                        let source = self.flows[flow].spec.source_id;
                        self.nodes[new.forward_path[1]].table.install_drop_rule(source);
                    }
                    FlowPhase::Active | FlowPhase::Querying => {
                        if self.scenario.scheme != Scheme::None {
                            self.flows[flow].query_attempt = 0;
                            self.start_query(flow);
                        }
                    }
                    _ => {}
                },
            }
        }
    }
}
