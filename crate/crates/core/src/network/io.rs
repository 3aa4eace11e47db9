use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ball, NetworkMeta, PoreEdge, PoreNetwork};
use crate::error::{Error, Result};

/// On-disk network layout: `{"nodes": [...], "edges": [...], "meta": {...}}`.
/// Units are μm, μm² and μm³.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
    pub meta: NetworkMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    pub area: f64,
    pub dist: f64,
    pub q: f64,
}

impl From<&PoreNetwork> for NetworkFile {
    fn from(net: &PoreNetwork) -> Self {
        NetworkFile {
            nodes: net
                .balls
                .iter()
                .enumerate()
                .map(|(id, b)| NodeRecord {
                    id,
                    x: b.center[0],
                    y: b.center[1],
                    z: b.center[2],
                    r: b.radius,
                    v: b.volume,
                })
                .collect(),
            edges: net
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    i: e.i,
                    j: e.j,
                    area: e.contact_area,
                    dist: e.center_distance,
                    q: e.conductance,
                })
                .collect(),
            meta: net.meta.clone(),
        }
    }
}

impl TryFrom<NetworkFile> for PoreNetwork {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        if file.nodes.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        let n = file.nodes.len();
        let mut balls = Vec::with_capacity(n);
        let mut centers = HashSet::new();
        for (pos, node) in file.nodes.iter().enumerate() {
            if node.id != pos {
                return Err(Error::input(format!(
                    "node ids must be 0..{n} in order; found id {} at position {pos}",
                    node.id
                )));
            }
            if !(node.r > 0.0 && node.v > 0.0) {
                return Err(Error::input(format!("node {pos}: radius and volume must be > 0")));
            }
            let key = [node.x.to_bits(), node.y.to_bits(), node.z.to_bits()];
            if !centers.insert(key) {
                return Err(Error::input(format!("node {pos} duplicates another node's center")));
            }
            balls.push(Ball {
                center: [node.x, node.y, node.z],
                radius: node.r,
                volume: node.v,
            });
        }
        let mut seen = HashSet::new();
        let mut edges = Vec::with_capacity(file.edges.len());
        for e in &file.edges {
            if e.i >= n || e.j >= n {
                return Err(Error::input(format!(
                    "edge ({}, {}) references a missing node",
                    e.i, e.j
                )));
            }
            if e.i == e.j {
                return Err(Error::input(format!("self-loop on node {}", e.i)));
            }
            let (i, j) = if e.i < e.j { (e.i, e.j) } else { (e.j, e.i) };
            if !seen.insert((i, j)) {
                return Err(Error::input(format!("duplicate edge ({i}, {j})")));
            }
            if !(e.dist > 0.0 && e.area >= 0.0 && e.q >= 0.0) {
                return Err(Error::input(format!("edge ({i}, {j}): invalid geometry")));
            }
            if (e.q - e.area / e.dist).abs() > 1e-9 * e.q.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::input(format!("edge ({i}, {j}): q != area / dist")));
            }
            edges.push(PoreEdge {
                i,
                j,
                contact_area: e.area,
                center_distance: e.dist,
                conductance: e.q,
            });
        }
        Ok(PoreNetwork {
            balls,
            edges,
            meta: file.meta,
        })
    }
}

pub fn export_network(net: &PoreNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&NetworkFile::from(net)).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn import_network(path: impl AsRef<Path>) -> Result<PoreNetwork> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: NetworkFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    PoreNetwork::try_from(file)
}
