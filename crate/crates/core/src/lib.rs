//! Discrete-event simulator of a wireless ad hoc network under a bandwidth
//! flooding attack, with a flow-monitoring defense and a probe/AIMD baseline.

pub mod defense;
pub mod error;
pub mod experiment;
pub mod mac;
pub mod metrics;
pub mod network;
pub mod routing;
pub mod scenario;
pub mod sim;
pub mod swan;
pub mod topology;
pub mod traffic;

pub use error::{Result, SimError};
pub use network::{FlowPhase, RunResult, TraceRecord, World, WorldOptions};
pub use scenario::{load_scenario, parse_scenario, Scenario, Scheme};
