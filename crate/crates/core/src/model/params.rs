use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dense, EncoderParams, PrototypeHead, INPUT_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub prototypes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], embed_dim: 32, prototypes: 64 }
    }
}

/// Encoder plus prototype head; also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub head: PrototypeHead,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, unit Gaussian prototype columns.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        if config.embed_dim == 0 || config.prototypes < 2 || config.hidden.contains(&0) {
            return Err(Error::InvalidInput(format!("invalid model config {config:?}")));
        }
        let mut dims = vec![INPUT_DIM];
        dims.extend(&config.hidden);
        dims.push(config.embed_dim);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..bound)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        let mask_token = Array1::from_shape_simple_fn(INPUT_DIM, || { let v: f64 = StandardNormal.sample(rng); 0.02 * v });
        let projection = Array2::from_shape_simple_fn((config.embed_dim, config.prototypes), || { let v: f64 = StandardNormal.sample(rng); v });
        let mut params = Self { encoder: EncoderParams { layers, mask_token }, head: PrototypeHead::new(projection)? };
        params.round_to_f32();
        Ok(params)
    }

    pub fn config(&self) -> ModelConfig {
        let layers = &self.encoder.layers;
        ModelConfig {
            hidden: layers[..layers.len() - 1].iter().map(|l| l.bias.len()).collect(),
            embed_dim: self.head.embed_dim(),
            prototypes: self.head.num_prototypes(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// `(name, shape, weight-decay flag)` of every tensor, in storage order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.layers.{i}.weight"), l.weight.shape().to_vec(), true));
            out.push((format!("encoder.layers.{i}.bias"), l.bias.shape().to_vec(), false));
        }
        out.push(("encoder.mask_token".into(), vec![INPUT_DIM], false));
        out.push(("head.prototypes".into(), self.head.projection().shape().to_vec(), false));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.encoder.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(self.encoder.mask_token.as_slice().expect("standard layout"));
        out.push(self.head.projection().as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.encoder.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.encoder.mask_token.as_slice_mut().expect("standard layout"));
        out.push(self.head.projection_mut().as_slice_mut().expect("standard layout"));
        out
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.tensor_specs().iter().map(|s| &s.1).eq(other.tensor_specs().iter().map(|s| &s.1))
    }

    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("parameter sets differ in shape".into()));
        }
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Order-independent fingerprint of the parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}
