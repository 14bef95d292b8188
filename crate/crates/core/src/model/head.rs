use ndarray::Array2;

use crate::error::{Error, Result};
use crate::losses::EmbeddingBatch;
use crate::sinkhorn::LogitsBatch;

/// `D × K` matrix of unit-norm prototype columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeHead {
    projection: Array2<f64>,
}

impl PrototypeHead {
    /// Normalizes the columns of `projection`.
    pub fn new(projection: Array2<f64>) -> Result<Self> {
        if projection.ncols() < 2 || projection.nrows() == 0 {
            return Err(Error::InvalidInput(format!("prototype matrix shape {:?}", projection.dim())));
        }
        let mut head = Self { projection };
        head.normalize_columns()?;
        Ok(head)
    }

    pub(crate) fn from_raw(projection: Array2<f64>) -> Self {
        Self { projection }
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    pub(crate) fn projection_mut(&mut self) -> &mut Array2<f64> {
        &mut self.projection
    }

    pub fn embed_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn num_prototypes(&self) -> usize {
        self.projection.ncols()
    }

    pub fn normalize_columns(&mut self) -> Result<()> {
        for (k, mut col) in self.projection.columns_mut().into_iter().enumerate() {
            let n = col.dot(&col).sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::DegenerateGeometry(format!("prototype {k} has norm {n}")));
            }
            col /= n;
        }
        Ok(())
    }

    /// `embeddings · projection`.
    pub fn logits(&self, embeddings: &Array2<f64>) -> Result<Array2<f64>> {
        if embeddings.ncols() != self.embed_dim() {
            return Err(Error::ShapeMismatch(format!(
                "embedding dim {} vs prototype dim {}",
                embeddings.ncols(),
                self.embed_dim()
            )));
        }
        Ok(embeddings.dot(&self.projection))
    }

    /// Gradients `(d/d embeddings, d/d projection)` given `d/d logits`.
    pub fn backward(&self, embeddings: &Array2<f64>, grad_logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        (grad_logits.dot(&self.projection.t()), embeddings.t().dot(grad_logits))
    }
}

/// Cosine logits of `embeddings` against the prototypes, tagged with `temperature`.
pub fn prototype_logits(head: &PrototypeHead, embeddings: &EmbeddingBatch, temperature: f64) -> Result<LogitsBatch> {
    LogitsBatch::new(head.logits(embeddings.values())?, temperature)
}
