//! Ball-network model of the pore space.
//!
//! Nodes are maximal inscribed balls covering every pore voxel center; an
//! edge joins two balls that overlap and carries the geometric conductance
//! `Q = A / L` (contact disk area over center distance).

mod edt;
mod extract;
mod io;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use edt::{distance_transform, DistanceField};
pub use extract::{build_edges, contact_area, extract_balls, extract_network};
pub use io::{export_network, import_network, NetworkFile};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    /// Center in micrometers.
    pub center: [f64; 3],
    /// Radius in micrometers.
    pub radius: f64,
    /// Volume in cubic micrometers.
    pub volume: f64,
}

impl Ball {
    pub fn new(center: [f64; 3], radius: f64) -> Self {
        Self {
            center,
            radius,
            volume: 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
        }
    }

    pub fn distance_to(&self, other: &Ball) -> f64 {
        dist(self.center, other.center)
    }
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Contact between two overlapping balls, `i < j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoreEdge {
    pub i: usize,
    pub j: usize,
    /// Contact area, μm².
    pub contact_area: f64,
    /// Center distance, μm.
    pub center_distance: f64,
    /// `contact_area / center_distance`, μm.
    pub conductance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub resolution_um: f64,
    #[serde(default)]
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoreNetwork {
    pub balls: Vec<Ball>,
    pub edges: Vec<PoreEdge>,
    pub meta: NetworkMeta,
}

impl PoreNetwork {
    /// Builds a network, computing edges from ball overlaps.
    pub fn from_balls(balls: Vec<Ball>, meta: NetworkMeta) -> Result<Self> {
        if balls.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        let edges = build_edges(&balls)?;
        Ok(Self { balls, edges, meta })
    }

    pub fn node_count(&self) -> usize {
        self.balls.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.balls.iter().map(|b| b.volume).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.balls.iter().map(|b| b.volume).sum()
    }

    /// Adjacency lists, neighbors sorted ascending.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.balls.len()];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Connected component label per node and the number of components.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let adj = self.adjacency();
        let mut label = vec![usize::MAX; adj.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..adj.len() {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = count;
                        queue.push_back(v);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Nodes within `hops` graph steps of `center`, ascending.
    pub fn neighborhood(&self, center: usize, hops: usize, adj: &[Vec<usize>]) -> Vec<usize> {
        let mut depth = vec![usize::MAX; adj.len()];
        depth[center] = 0;
        let mut queue = VecDeque::from([center]);
        let mut out = vec![center];
        while let Some(u) = queue.pop_front() {
            if depth[u] == hops {
                continue;
            }
            for &v in &adj[u] {
                if depth[v] == usize::MAX {
                    depth[v] = depth[u] + 1;
                    out.push(v);
                    queue.push_back(v);
                }
            }
        }
        out.sort_unstable();
        out
    }
}
