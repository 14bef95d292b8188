//! kNN graphs with Gaussian edge weights `w = exp(−d²/σ²)`.

use serde::{Deserialize, Serialize};

use super::kdtree::{KdTree, Neighbor};
use super::PointCloud;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    /// σ = median of the retained kNN distances of the cloud.
    Adaptive,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub distance: f64,
}

/// Directed kNN edges grouped by source point, with their weights.
#[derive(Debug, Clone)]
pub struct KnnGraph {
    pub k: usize,
    pub sigma: f64,
    pub max_radius: f64,
    num_nodes: usize,
    edges: Vec<Edge>,
    weights: Vec<f64>,
    offsets: Vec<usize>,
}

impl KnnGraph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Range into [`edges`](Self::edges) of the outgoing edges of `node`.
    pub fn edge_range(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    pub fn distances(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.distance).collect()
    }
}

/// Exact `k` nearest neighbors of every valid point among the valid points,
/// self excluded. Invalid points get an empty list.
pub fn knn_search(cloud: &PointCloud, k: usize) -> Vec<Vec<Neighbor>> {
    let valid = cloud.valid_indices();
    let tree = KdTree::with_indices(cloud.positions(), valid);
    cloud
        .positions()
        .iter()
        .zip(cloud.validity())
        .enumerate()
        .map(|(i, (p, &ok))| if ok { tree.knn(p, k, Some(i)) } else { Vec::new() })
        .collect()
}

/// Median of a list of lengths (mean of the middle pair for even counts).
pub fn adaptive_sigma(distances: &[f64]) -> Result<f64> {
    if distances.is_empty() {
        return Err(invalid("median of an empty distance list"));
    }
    let mut d = distances.to_vec();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    Ok(if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) })
}

/// Builds the kNN graph, drops edges longer than `max_radius` (and
/// zero-length edges between coincident points), then fills the weights.
///
/// In adaptive mode σ is the median of the retained distances; when the
/// radius cutoff removes every edge the median of the uncut distances is
/// used instead so σ stays defined.
pub fn build_knn_graph(cloud: &PointCloud, k: usize, max_radius: f64, sigma_mode: SigmaMode) -> Result<KnnGraph> {
    if cloud.valid_count() < 2 {
        return Err(Error::EmptyCloud(format!(
            "kNN graph needs at least 2 valid points, got {}",
            cloud.valid_count()
        )));
    }
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if !(max_radius > 0.0) {
        return Err(invalid(format!("max_radius must be positive, got {max_radius}")));
    }
    if let SigmaMode::Fixed(s) = sigma_mode {
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid(format!("fixed sigma must be positive, got {s}")));
        }
    }

    let neighbors = knn_search(cloud, k);
    let n = cloud.len();
    let mut edges = Vec::new();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut uncut = Vec::new();
    offsets.push(0);
    for (source, list) in neighbors.iter().enumerate() {
        for nb in list {
            let distance = nb.distance();
            if distance > 0.0 {
                uncut.push(distance);
                if distance <= max_radius {
                    edges.push(Edge { source, target: nb.index, distance });
                }
            }
        }
        offsets.push(edges.len());
    }
    if uncut.is_empty() {
        return Err(Error::DegenerateGeometry("all points coincide (sigma = 0)".into()));
    }

    let sigma = match sigma_mode {
        SigmaMode::Fixed(s) => s,
        SigmaMode::Adaptive if edges.is_empty() => adaptive_sigma(&uncut)?,
        SigmaMode::Adaptive => adaptive_sigma(&edges.iter().map(|e| e.distance).collect::<Vec<_>>())?,
    };
    let inv = 1.0 / (sigma * sigma);
    let weights = edges.iter().map(|e| (-(e.distance * e.distance) * inv).exp()).collect();
    Ok(KnnGraph { k, sigma, max_radius, num_nodes: n, edges, weights, offsets })
}
