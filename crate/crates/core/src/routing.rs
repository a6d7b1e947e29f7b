//! Minimum-hop routes with deterministic tie-breaking and a link-break hook.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Result, SimError};
use crate::topology::{NodeId, Topology};

pub type FlowId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub flow_id: FlowId,
    pub forward_path: Rc<[NodeId]>,
    pub reverse_path: Rc<[NodeId]>,
}

impl Route {
    pub fn new(flow_id: FlowId, forward: Vec<NodeId>) -> Self {
        let reverse: Vec<NodeId> = forward.iter().rev().copied().collect();
        Self {
            flow_id,
            forward_path: forward.into(),
            reverse_path: reverse.into(),
        }
    }

    pub fn source(&self) -> NodeId {
        self.forward_path[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.forward_path.last().expect("routes are never empty")
    }

    pub fn hops(&self) -> usize {
        self.forward_path.len() - 1
    }

    /// True if the path uses the undirected link (u, v).
    pub fn uses_link(&self, u: NodeId, v: NodeId) -> bool {
        self.forward_path
            .windows(2)
            .any(|w| (w[0] == u && w[1] == v) || (w[0] == v && w[1] == u))
    }

    /// (upstream, downstream) neighbours of `node` on the forward path.
    pub fn stream_at(&self, node: NodeId) -> Option<(Option<NodeId>, Option<NodeId>)> {
        let idx = self.forward_path.iter().position(|&n| n == node)?;
        let up = idx.checked_sub(1).map(|i| self.forward_path[i]);
        let down = self.forward_path.get(idx + 1).copied();
        Some((up, down))
    }
}

/// Minimum-hop path; among equal-length paths the smallest next hop wins at every step.
pub fn compute_route(
    flow_id: FlowId,
    source: NodeId,
    destination: NodeId,
    topology: &Topology,
) -> Result<Route> {
    assert_ne!(source, destination, "a route needs two distinct endpoints");
    let dist = topology.hop_distances(destination);
    let Some(mut remaining) = dist[source] else {
        return Err(SimError::NoRoute(source, destination));
    };
    let mut path = vec![source];
    let mut at = source;
    while remaining > 0 {
        // BTreeSet iteration is ascending, so the first match is the smallest id.
        at = *topology
            .neighbors(at)
            .iter()
            .find(|&&n| dist[n] == Some(remaining - 1))
            .expect("BFS layers are contiguous");
        path.push(at);
        remaining -= 1;
    }
    Ok(Route::new(flow_id, path))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RouteChange {
    Rerouted { old: Route, new: Route },
    Failed { old: Route },
}

impl RouteChange {
    pub fn flow_id(&self) -> FlowId {
        match self {
            RouteChange::Rerouted { old, .. } | RouteChange::Failed { old } => old.flow_id,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    routes: BTreeMap<FlowId, Route>,
}

impl RouteTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, route: Route) {
        self.routes.insert(route.flow_id, route);
    }

    pub fn get(&self, flow: FlowId) -> Option<&Route> {
        self.routes.get(&flow)
    }

    pub fn remove(&mut self, flow: FlowId) -> Option<Route> {
        self.routes.remove(&flow)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Route> {
        self.routes.values()
    }

    /// Drop the (u, v) link and repair every route that crossed it.
    ///
    /// Flows with no remaining path are removed from the table and reported as failed.
    pub fn on_link_break(
        &mut self,
        topology: &mut Topology,
        u: NodeId,
        v: NodeId,
    ) -> Vec<RouteChange> {
        topology.remove_link(u, v);
        let affected: Vec<FlowId> = self
            .routes
            .values()
            .filter(|r| r.uses_link(u, v))
            .map(|r| r.flow_id)
            .collect();
        let mut changes = Vec::with_capacity(affected.len());
        for flow in affected {
            let old = self.routes.remove(&flow).expect("collected from the table");
            match compute_route(flow, old.source(), old.destination(), topology) {
                Ok(new) => {
                    self.routes.insert(flow, new.clone());
                    changes.push(RouteChange::Rerouted { old, new });
                }
                Err(_) => changes.push(RouteChange::Failed { old }),
            }
        }
        changes
    }
}
