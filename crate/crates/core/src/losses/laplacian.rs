use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{total::LossConfig, EmbeddingBatch, RegularizerOutput};
use crate::error::{Error, Result};
use crate::geometry::KnnGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianForm {
    /// `(1/|E|) Σ_(i,j) w_ij ‖z_i − z_j‖²`
    Pairwise,
    /// `(1/N) Σ_i Huber_δ(‖z_i − Σ_j w_ij z_j / Σ_j w_ij‖)` over points with neighbors.
    HuberResidual,
}

/// Huber penalty: `r²/2` for `r ≤ δ`, `δ(r − δ/2)` above.
pub fn huber(r: f64, delta: f64) -> f64 {
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// Laplacian smoothing of `embeddings` over `graph` and its gradient.
pub fn laplacian_loss(embeddings: &EmbeddingBatch, graph: &KnnGraph, config: &LossConfig) -> Result<RegularizerOutput> {
    let z = embeddings.values();
    if graph.num_nodes() != z.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} nodes, batch has {} embeddings",
            graph.num_nodes(),
            z.nrows()
        )));
    }
    let mut grad = Array2::zeros(z.raw_dim());
    if graph.is_empty() {
        return Ok(RegularizerOutput { value: 0.0, grad, empty: true });
    }
    let value = match config.laplacian_form {
        LaplacianForm::Pairwise => pairwise(z, graph, &mut grad),
        LaplacianForm::HuberResidual => huber_residual(z, graph, config.huber_delta, &mut grad),
    };
    Ok(RegularizerOutput { value, grad, empty: false })
}

fn pairwise(z: &Array2<f64>, graph: &KnnGraph, grad: &mut Array2<f64>) -> f64 {
    let scale = 1.0 / graph.num_edges() as f64;
    let mut total = 0.0;
    for (e, &w) in graph.edges().iter().zip(graph.weights()) {
        let diff = &z.row(e.source) - &z.row(e.target);
        total += w * diff.dot(&diff);
        let g = diff * (2.0 * w * scale);
        grad.row_mut(e.source).scaled_add(1.0, &g);
        grad.row_mut(e.target).scaled_add(-1.0, &g);
    }
    total * scale
}

fn huber_residual(z: &Array2<f64>, graph: &KnnGraph, delta: f64, grad: &mut Array2<f64>) -> f64 {
    let active: Vec<usize> = (0..graph.num_nodes()).filter(|&i| !graph.edge_range(i).is_empty()).collect();
    let scale = 1.0 / active.len() as f64;
    let edges = graph.edges();
    let weights = graph.weights();
    let mut total = 0.0;
    for &i in &active {
        let range = graph.edge_range(i);
        let wsum: f64 = weights[range.clone()].iter().sum();
        let mut mean = Array1::zeros(z.ncols());
        for e in range.clone() {
            mean.scaled_add(weights[e] / wsum, &z.row(edges[e].target));
        }
        let r = &z.row(i) - &mean;
        let norm = r.dot(&r).sqrt();
        total += huber(norm, delta);
        // dHuber/dr = r inside the quadratic zone, δ r/‖r‖ outside
        let g = if norm <= delta { r * scale } else { r * (delta / norm * scale) };
        grad.row_mut(i).scaled_add(1.0, &g);
        for e in range {
            grad.row_mut(edges[e].target).scaled_add(-weights[e] / wsum, &g);
        }
    }
    total * scale
}
