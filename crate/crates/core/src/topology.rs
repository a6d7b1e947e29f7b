//! Static node placement and unit-disk adjacency.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;

use crate::error::{Result, SimError};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    radio_range: f64,
    adjacency: Vec<BTreeSet<NodeId>>,
}

/// Uniform placement of `count` nodes in `area`; ids are assigned 0..count.
pub fn random_placement<R: Rng>(count: usize, area: Area, rng: &mut R) -> Vec<NodeSpec> {
    (0..count)
        .map(|id| NodeSpec {
            id,
            x: rng.random_range(0.0..=area.width),
            y: rng.random_range(0.0..=area.height),
        })
        .collect()
}

pub fn build_topology(nodes: Vec<NodeSpec>, area: Area, radio_range: f64) -> Result<Topology> {
    if !(radio_range > 0.0) || !radio_range.is_finite() {
        return Err(SimError::InvalidGeometry(format!(
            "radio range must be positive, got {radio_range}"
        )));
    }
    if !(area.width > 0.0 && area.height > 0.0) {
        return Err(SimError::InvalidGeometry(format!(
            "area must be positive, got {}x{}",
            area.width, area.height
        )));
    }
    for (idx, n) in nodes.iter().enumerate() {
        if n.id != idx {
            return Err(SimError::InvalidGeometry(format!(
                "node ids must be dense and ordered; position {idx} holds id {}",
                n.id
            )));
        }
        if !area.contains(n.x, n.y) {
            return Err(SimError::InvalidGeometry(format!(
                "node {} at ({}, {}) lies outside the {}x{} area",
                n.id, n.x, n.y, area.width, area.height
            )));
        }
    }

    let mut adjacency = vec![BTreeSet::new(); nodes.len()];
    let r2 = radio_range * radio_range;
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            let dx = nodes[i].x - nodes[j].x;
            let dy = nodes[i].y - nodes[j].y;
            if dx * dx + dy * dy <= r2 {
                adjacency[i].insert(j);
                adjacency[j].insert(i);
            }
        }
    }
    Ok(Topology {
        nodes,
        radio_range,
        adjacency,
    })
}

impl Topology {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn radio_range(&self) -> f64 {
        self.radio_range
    }

    pub fn neighbors(&self, node: NodeId) -> &BTreeSet<NodeId> {
        &self.adjacency[node]
    }

    pub fn is_adjacent(&self, u: NodeId, v: NodeId) -> bool {
        self.adjacency.get(u).is_some_and(|n| n.contains(&v))
    }

    /// Remove the (u, v) link. Returns false if it was not present.
    pub fn remove_link(&mut self, u: NodeId, v: NodeId) -> bool {
        if !self.is_adjacent(u, v) {
            return false;
        }
        self.adjacency[u].remove(&v);
        self.adjacency[v].remove(&u);
        true
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<NodeId>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for start in 0..self.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut q = VecDeque::from([start]);
            while let Some(u) = q.pop_front() {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        q.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Largest connected component (smallest-id component wins ties).
    pub fn largest_component(&self) -> Vec<NodeId> {
        self.components()
            .into_iter()
            .fold(Vec::new(), |best, c| if c.len() > best.len() { c } else { best })
    }

    /// Hop distances from `source` by breadth-first search; `None` if unreachable.
    pub fn hop_distances(&self, source: NodeId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[source] = Some(0);
        let mut q = VecDeque::from([source]);
        while let Some(u) = q.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }
}
