//! Experiment description: parsing, defaults and validation.
//!
//! Scenarios are TOML documents made of flat keys plus optional `[[flow]]` and
//! `[[link_break]]` blocks. When no `[[flow]]` block is present the flow mix
//! is drawn per seed from the `legitimate_*` / `attack_*` keys.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::defense::{DefenseParams, RateEstimator};
use crate::error::{Result, SimError};
use crate::mac::{CongestionThresholds, MacConfig};
use crate::swan::SwanParams;
use crate::topology::{Area, NodeId};
use crate::traffic::{FlowMix, FlowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Proposed,
    Swan,
    None,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Proposed, Scheme::Swan, Scheme::None];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Swan => "swan",
            Scheme::None => "none",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" => Ok(Scheme::Proposed),
            "swan" => Ok(Scheme::Swan),
            "none" => Ok(Scheme::None),
            other => Err(SimError::validation(
                "scheme",
                format!("expected proposed, swan or none; got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBreak {
    pub time_s: f64,
    pub u: NodeId,
    pub v: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowPlan {
    Explicit(Vec<FlowSpec>),
    Generated(FlowMix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub node_count: usize,
    pub area: Area,
    pub radio_range_m: f64,
    pub link_capacity_bps: f64,
    pub sim_time_s: f64,
    pub packet_size_bytes: u32,
    pub control_packet_bytes: u32,
    pub traffic: String,
    pub mac: String,
    pub routing: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub flows: FlowPlan,
    pub link_breaks: Vec<LinkBreak>,
    pub defense: DefenseParams,
    pub swan: SwanParams,
    pub mac_config: MacConfig,
    pub queue_limit_packets: usize,
    pub query_timeout_s: f64,
    pub query_attempts: u32,
    pub bucket_width_s: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    source: NodeId,
    destination: NodeId,
    rate_bps: f64,
    #[serde(default)]
    start_s: f64,
    #[serde(default)]
    attacker: bool,
    packet_size_bytes: Option<u32>,
    requested_bps: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinkBreak {
    time_s: f64,
    u: NodeId,
    v: NodeId,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    node_count: Option<usize>,
    area_width_m: Option<f64>,
    area_height_m: Option<f64>,
    radio_range_m: Option<f64>,
    link_capacity_bps: Option<f64>,
    sim_time_s: Option<f64>,
    packet_size_bytes: Option<u32>,
    control_packet_bytes: Option<u32>,
    traffic: Option<String>,
    mac: Option<String>,
    routing: Option<String>,
    scheme: Option<String>,
    seed: Option<u64>,

    legitimate_flows: Option<usize>,
    legitimate_rate_bps: Option<f64>,
    legitimate_start_s: Option<f64>,
    attacker_flows: Option<usize>,
    attack_rate_bps: Option<f64>,
    attack_start_s: Option<f64>,
    min_hops: Option<usize>,

    delta_bps: Option<f64>,
    #[serde(rename = "interval_T_s")]
    interval_t_s: Option<f64>,
    epsilon_rel: Option<f64>,
    theta_busy: Option<f64>,
    theta_rts_per_s: Option<f64>,
    theta_retx: Option<f64>,
    rate_estimator: Option<RateEstimator>,
    measurement_slack_packets: Option<f64>,
    detection_intervals: Option<u32>,
    unresponsive_strikes: Option<u32>,

    swan_increment_bps: Option<f64>,
    swan_decrease_fraction: Option<f64>,

    max_retries: Option<u32>,
    backoff_mean_s: Option<f64>,
    queue_limit_packets: Option<usize>,
    query_timeout_s: Option<f64>,
    query_attempts: Option<u32>,
    bucket_width_s: Option<f64>,

    #[serde(default)]
    flow: Vec<RawFlow>,
    #[serde(default)]
    link_break: Vec<RawLinkBreak>,
}

impl Default for Scenario {
    fn default() -> Self {
        parse_scenario("").expect("empty scenario takes every default")
    }
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(SimError::validation(field, format!("must be a positive number, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(SimError::validation(field, format!("must be >= 0, got {v}")))
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        SimError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    raw.validate()
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    parse_scenario(&text)
}

impl RawScenario {
    fn validate(self) -> Result<Scenario> {
        let node_count = self.node_count.unwrap_or(80);
        if node_count < 2 {
            return Err(SimError::validation("node_count", "need at least two nodes"));
        }
        let area = Area {
            width: positive("area_width_m", self.area_width_m.unwrap_or(1200.0))?,
            height: positive("area_height_m", self.area_height_m.unwrap_or(1200.0))?,
        };
        let radio_range_m = positive("radio_range_m", self.radio_range_m.unwrap_or(250.0))?;
        let link_capacity_bps = positive("link_capacity_bps", self.link_capacity_bps.unwrap_or(2_000_000.0))?;
        let sim_time_s = positive("sim_time_s", self.sim_time_s.unwrap_or(60.0))?;
        let packet_size_bytes = self.packet_size_bytes.unwrap_or(512);
        if packet_size_bytes == 0 {
            return Err(SimError::validation("packet_size_bytes", "must be positive"));
        }
        let control_packet_bytes = self.control_packet_bytes.unwrap_or(64);
        if control_packet_bytes == 0 {
            return Err(SimError::validation("control_packet_bytes", "must be positive"));
        }

        let traffic = self.traffic.unwrap_or_else(|| "cbr".into()).to_ascii_lowercase();
        if traffic != "cbr" {
            return Err(SimError::validation("traffic", format!("only cbr is supported, got `{traffic}`")));
        }
        let mac = self.mac.unwrap_or_else(|| "802.11".into());
        let routing = self.routing.unwrap_or_else(|| "aodv".into()).to_ascii_lowercase();
        let scheme = match self.scheme {
            Some(s) => s.parse()?,
            None => Scheme::Proposed,
        };

        let thresholds = CongestionThresholds {
            busy: positive("theta_busy", self.theta_busy.unwrap_or(CongestionThresholds::default().busy))?,
            rts_per_s: positive(
                "theta_rts_per_s",
                self.theta_rts_per_s.unwrap_or(CongestionThresholds::default().rts_per_s),
            )?,
            retx: positive("theta_retx", self.theta_retx.unwrap_or(CongestionThresholds::default().retx))?,
        };
        let d = DefenseParams::default();
        let defense = DefenseParams {
            delta_bps: positive("delta_bps", self.delta_bps.unwrap_or(d.delta_bps))?,
            interval_s: positive("interval_T_s", self.interval_t_s.unwrap_or(d.interval_s))?,
            epsilon_rel: positive("epsilon_rel", self.epsilon_rel.unwrap_or(d.epsilon_rel))?,
            thresholds,
            estimator: self.rate_estimator.unwrap_or(d.estimator),
            measurement_slack_packets: non_negative(
                "measurement_slack_packets",
                self.measurement_slack_packets.unwrap_or(d.measurement_slack_packets),
            )?,
            detection_intervals: self.detection_intervals.unwrap_or(d.detection_intervals).max(1),
            unresponsive_strikes: self.unresponsive_strikes.unwrap_or(d.unresponsive_strikes).max(1),
        };
        let s = SwanParams::default();
        let swan = SwanParams {
            increment_bps: non_negative("swan_increment_bps", self.swan_increment_bps.unwrap_or(s.increment_bps))?,
            decrease_fraction: self.swan_decrease_fraction.unwrap_or(s.decrease_fraction),
        };
        if !(swan.decrease_fraction > 0.0 && swan.decrease_fraction < 1.0) {
            return Err(SimError::validation("swan_decrease_fraction", "must lie in (0, 1)"));
        }
        let m = MacConfig::default();
        let mac_config = MacConfig {
            max_retries: self.max_retries.unwrap_or(m.max_retries),
            backoff_mean: positive("backoff_mean_s", self.backoff_mean_s.unwrap_or(m.backoff_mean))?,
        };
        let queue_limit_packets = self.queue_limit_packets.unwrap_or(50);
        if queue_limit_packets == 0 {
            return Err(SimError::validation("queue_limit_packets", "must be positive"));
        }

        let flows = if self.flow.is_empty() {
            let mix = FlowMix {
                legitimate: self.legitimate_flows.unwrap_or(5),
                attackers: self.attacker_flows.unwrap_or(1),
                legitimate_rate: positive("legitimate_rate_bps", self.legitimate_rate_bps.unwrap_or(50_000.0))?,
                attack_rate: positive("attack_rate_bps", self.attack_rate_bps.unwrap_or(500_000.0))?,
                packet_size: packet_size_bytes,
                legitimate_start: non_negative("legitimate_start_s", self.legitimate_start_s.unwrap_or(0.0))?,
                attack_start: non_negative("attack_start_s", self.attack_start_s.unwrap_or(10.0))?,
                min_hops: self.min_hops.unwrap_or(2).max(1),
            };
            if mix.legitimate + mix.attackers == 0 {
                return Err(SimError::validation("legitimate_flows", "scenario has no flows"));
            }
            FlowPlan::Generated(mix)
        } else {
            let mut specs = Vec::with_capacity(self.flow.len());
            for (i, f) in self.flow.into_iter().enumerate() {
                let field = |name: &str| format!("flow[{i}].{name}");
                if f.source >= node_count {
                    return Err(SimError::validation(field("source"), format!("node {} does not exist", f.source)));
                }
                if f.destination >= node_count {
                    return Err(SimError::validation(
                        field("destination"),
                        format!("node {} does not exist", f.destination),
                    ));
                }
                if f.source == f.destination {
                    return Err(SimError::validation(field("destination"), "equals the source"));
                }
                let packet_size = f.packet_size_bytes.unwrap_or(packet_size_bytes);
                if packet_size == 0 {
                    return Err(SimError::validation(field("packet_size_bytes"), "must be positive"));
                }
                specs.push(FlowSpec {
                    flow_id: i,
                    source_id: f.source,
                    destination_id: f.destination,
                    data_rate: positive(&field("rate_bps"), f.rate_bps)?,
                    packet_size,
                    start_time: non_negative(&field("start_s"), f.start_s)?,
                    is_attacker: f.attacker,
                    requested_rate: positive(&field("requested_bps"), f.requested_bps.unwrap_or(f.rate_bps))?,
                });
            }
            FlowPlan::Explicit(specs)
        };

        let mut link_breaks = Vec::with_capacity(self.link_break.len());
        for (i, b) in self.link_break.into_iter().enumerate() {
            if b.u >= node_count || b.v >= node_count || b.u == b.v {
                return Err(SimError::validation(format!("link_break[{i}]"), "endpoints must be two existing nodes"));
            }
            link_breaks.push(LinkBreak {
                time_s: non_negative(&format!("link_break[{i}].time_s"), b.time_s)?,
                u: b.u,
                v: b.v,
            });
        }

        Ok(Scenario {
            node_count,
            area,
            radio_range_m,
            link_capacity_bps,
            sim_time_s,
            packet_size_bytes,
            control_packet_bytes,
            traffic,
            mac,
            routing,
            scheme,
            seed: self.seed.unwrap_or(1),
            flows,
            link_breaks,
            defense,
            swan,
            mac_config,
            queue_limit_packets,
            query_timeout_s: positive("query_timeout_s", self.query_timeout_s.unwrap_or(1.0))?,
            query_attempts: self.query_attempts.unwrap_or(3).max(1),
            bucket_width_s: positive("bucket_width_s", self.bucket_width_s.unwrap_or(1.0))?,
        })
    }
}

impl Scenario {
    /// Same scenario with a different attacker count. Explicit flow lists can
    /// only shrink.
    pub fn with_attackers(&self, count: usize) -> Scenario {
        let mut s = self.clone();
        match &mut s.flows {
            FlowPlan::Generated(mix) => mix.attackers = count,
            FlowPlan::Explicit(flows) => {
                let mut out: Vec<FlowSpec> = flows.iter().filter(|f| !f.is_attacker).cloned().collect();
                out.extend(flows.iter().filter(|f| f.is_attacker).take(count).cloned());
                for (i, f) in out.iter_mut().enumerate() {
                    f.flow_id = i;
                }
                *flows = out;
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT: &str = include_str!("../scenarios/default.toml");

    #[test]
    fn default_file_matches_defaults() {
        let s = parse_scenario(DEFAULT).unwrap();
        assert_eq!(s.node_count, 80);
        assert_eq!(s.area, Area { width: 1200.0, height: 1200.0 });
        assert_eq!(s.radio_range_m, 250.0);
        assert_eq!(s.link_capacity_bps, 2_000_000.0);
        assert_eq!(s.sim_time_s, 60.0);
        assert_eq!(s.packet_size_bytes, 512);
        assert_eq!(s.traffic, "cbr");
        assert_eq!(s.routing, "aodv");
        assert_eq!(s.mac, "802.11");
    }

    #[test]
    fn omitted_delta_takes_default() {
        let s = parse_scenario("node_count = 10\n").unwrap();
        assert_eq!(s.defense.delta_bps, 5_000.0);
        assert_eq!(s.defense.interval_s, 1.0);
        assert_eq!(s.defense.epsilon_rel, 0.05);
    }

    #[test]
    fn negative_range_is_rejected() {
        match parse_scenario("radio_range_m = -1\n") {
            Err(SimError::Validation { field, .. }) => assert_eq!(field, "radio_range_m"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_scenario("node_count = 80\nradio_range_m = = 3\n") {
            Err(SimError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_scenario("nodes = 80\n") {
            Err(SimError::Parse { line, message, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("nodes"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn explicit_flows_and_breaks() {
        let s = parse_scenario(
            r#"
node_count = 4
scheme = "swan"
[[flow]]
source = 0
destination = 3
rate_bps = 50000
[[flow]]
source = 1
destination = 3
rate_bps = 500000
start_s = 10
attacker = true
[[link_break]]
time_s = 5
u = 1
v = 2
"#,
        )
        .unwrap();
        assert_eq!(s.scheme, Scheme::Swan);
        match &s.flows {
            FlowPlan::Explicit(f) => {
                assert_eq!(f.len(), 2);
                assert!(f[1].is_attacker);
                assert_eq!(f[1].start_time, 10.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.link_breaks, vec![LinkBreak { time_s: 5.0, u: 1, v: 2 }]);
    }

    #[test]
    fn flow_endpoints_must_exist() {
        let err = parse_scenario("node_count = 4\n[[flow]]\nsource = 0\ndestination = 9\nrate_bps = 1\n");
        assert!(matches!(err, Err(SimError::Validation { field, .. }) if field == "flow[0].destination"));
    }

    #[test]
    fn scheme_names() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("tcp".parse::<Scheme>().is_err());
    }

    #[test]
    fn attacker_override() {
        let s = Scenario::default().with_attackers(4);
        match s.flows {
            FlowPlan::Generated(mix) => assert_eq!(mix.attackers, 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
