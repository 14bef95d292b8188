use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::losses::EmbeddingBatch;

/// xyz, rgb and normal.
pub const INPUT_DIM: usize = 9;

const NORM_FLOOR: f64 = 1e-8;

/// `y = x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// MLP layers (SiLU between them, none after the last) and the input-space
/// token that replaces masked points.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Dense>,
    pub mask_token: Array1<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x · sigmoid(x)`
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_with_grad(x: f64) -> (f64, f64) {
    let s = sigmoid(x);
    (x * s, s * (1.0 + x * (1.0 - s)))
}

/// Builds the `N × 9` input matrix. Missing colors or normals are zero-filled;
/// the flag reports whether that happened.
pub fn point_features(cloud: &PointCloud) -> (Array2<f64>, bool) {
    let n = cloud.len();
    let mut x = Array2::zeros((n, INPUT_DIM));
    for (i, p) in cloud.positions().iter().enumerate() {
        x[[i, 0]] = p.x;
        x[[i, 1]] = p.y;
        x[[i, 2]] = p.z;
    }
    if let Some(c) = cloud.colors() {
        for (i, c) in c.iter().enumerate() {
            x[[i, 3]] = c.x;
            x[[i, 4]] = c.y;
            x[[i, 5]] = c.z;
        }
    }
    if let Some(nr) = cloud.normals() {
        for (i, nr) in nr.iter().enumerate() {
            x[[i, 6]] = nr.x;
            x[[i, 7]] = nr.y;
            x[[i, 8]] = nr.z;
        }
    }
    (x, cloud.colors().is_none() || cloud.normals().is_none())
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Input of every layer.
    inputs: Vec<Array2<f64>>,
    /// Activation slope at every hidden pre-activation.
    slopes: Vec<Array2<f64>>,
    /// Unnormalized output rows' norms.
    norms: Array1<f64>,
    /// Normalized output.
    output: Array2<f64>,
    mask: Option<Vec<bool>>,
}

impl EncoderCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

impl EncoderParams {
    pub fn embed_dim(&self) -> usize {
        self.layers.last().map_or(INPUT_DIM, |l| l.bias.len())
    }

    pub fn validate(&self) -> Result<()> {
        let mut dim = INPUT_DIM;
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.nrows() != dim || l.weight.ncols() != l.bias.len() {
                return Err(Error::ShapeMismatch(format!("encoder layer {i} has inconsistent shapes")));
            }
            dim = l.bias.len();
        }
        if self.layers.is_empty() || self.mask_token.len() != INPUT_DIM {
            return Err(Error::ShapeMismatch("encoder needs at least one layer and a 9-d mask token".into()));
        }
        let finite = self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
            && self.mask_token.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(())
    }

    /// Forward pass on a feature matrix; rows flagged in `mask` are replaced
    /// by the mask token first. Output rows are unit-norm; a row whose norm
    /// falls below 1e-8 becomes the first basis vector.
    pub fn forward(&self, features: &Array2<f64>, mask: Option<&[bool]>) -> Result<EncoderCache> {
        self.validate()?;
        if features.ncols() != INPUT_DIM {
            return Err(Error::ShapeMismatch(format!("expected {INPUT_DIM} input features, got {}", features.ncols())));
        }
        let mut x = features.clone();
        if let Some(mask) = mask {
            if mask.len() != x.nrows() {
                return Err(Error::ShapeMismatch("mask length differs from point count".into()));
            }
            for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
                x.row_mut(i).assign(&self.mask_token);
            }
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut slopes = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let a = x.dot(&layer.weight) + &layer.bias;
            inputs.push(x);
            if li < last {
                let mut slope = a;
                x = Array2::zeros(slope.raw_dim());
                Zip::from(&mut x).and(&mut slope).for_each(|y, d| (*y, *d) = silu_with_grad(*d));
                slopes.push(slope);
            } else {
                x = a;
            }
        }
        let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        let mut output = x;
        for (mut row, &n) in output.rows_mut().into_iter().zip(norms.iter()) {
            if n < NORM_FLOOR {
                row.fill(0.0);
                row[0] = 1.0;
            } else {
                row /= n;
            }
        }
        Ok(EncoderCache { inputs, slopes, norms, output, mask: mask.map(<[bool]>::to_vec) })
    }

    /// Parameter gradients given `d loss / d output`.
    pub fn backward(&self, cache: &EncoderCache, grad_output: &Array2<f64>) -> Result<EncoderParams> {
        if grad_output.dim() != cache.output.dim() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs output {:?}",
                grad_output.dim(),
                cache.output.dim()
            )));
        }
        // through the row normalization: (g − z (z·g)) / ‖y‖
        let mut dy = grad_output.clone();
        Zip::from(dy.rows_mut())
            .and(cache.output.rows())
            .and(&cache.norms)
            .for_each(|mut g, z, &n| {
                if n < NORM_FLOOR {
                    g.fill(0.0);
                } else {
                    let proj = z.dot(&g);
                    g.scaled_add(-proj, &z);
                    g /= n;
                }
            });

        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut upstream = dy;
        for li in (0..self.layers.len()).rev() {
            if li < self.layers.len() - 1 {
                upstream *= &cache.slopes[li];
            }
            let layer = &self.layers[li];
            grads.push(Dense { weight: cache.inputs[li].t().dot(&upstream), bias: upstream.sum_axis(Axis(0)) });
            upstream = upstream.dot(&layer.weight.t());
        }
        grads.reverse();

        let mut mask_token = Array1::zeros(INPUT_DIM);
        if let Some(mask) = &cache.mask {
            for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
                mask_token += &upstream.row(i);
            }
        }
        Ok(EncoderParams { layers: grads, mask_token })
    }
}

/// Embeddings of every point of `cloud`.
pub fn encode(params: &EncoderParams, cloud: &PointCloud) -> Result<EmbeddingBatch> {
    encode_with_mask(params, cloud, None).map(|(e, _)| e)
}

pub fn encode_with_mask(params: &EncoderParams, cloud: &PointCloud, mask: Option<&[bool]>) -> Result<(EmbeddingBatch, EncoderCache)> {
    let (features, missing) = point_features(cloud);
    if missing {
        log::debug!("encode: colors or normals missing, zero-filled");
    }
    let cache = params.forward(&features, mask)?;
    let emb = EmbeddingBatch::new(cache.output.clone(), cloud.positions().to_vec())?;
    Ok((emb, cache))
}
