//! Clustering cross-entropy, Laplacian smoothing, noise consistency and the
//! weighted total objective. Every loss returns its value together with the
//! analytic gradient with respect to the student-side input; teacher inputs
//! are treated as constants.

mod clustering;
mod consistency;
mod correspondence;
mod laplacian;
mod total;

use ndarray::Array2;

pub use crate::geometry::adaptive_sigma;
pub use clustering::clustering_ce;
pub use consistency::consistency_loss;
pub use correspondence::{match_correspondences, CorrespondenceSet};
pub use laplacian::{huber, laplacian_loss, LaplacianForm};
pub use total::{total_loss, GradKey, GradSpace, GradientSet, LossBreakdown, LossConfig, LossParts, LossTerm, ViewSlot};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Per-point embeddings and the coordinates they are attached to.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    values: Array2<f64>,
    positions: Vec<Vec3>,
}

impl EmbeddingBatch {
    pub fn new(values: Array2<f64>, positions: Vec<Vec3>) -> Result<Self> {
        if values.nrows() != positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} embeddings for {} positions",
                values.nrows(),
                positions.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding values".into()));
        }
        Ok(Self { values, positions })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// A scalar regularizer value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerOutput {
    pub value: f64,
    pub grad: Array2<f64>,
    /// Set when there was nothing to sum over (no edges or no pairs).
    pub empty: bool,
}
