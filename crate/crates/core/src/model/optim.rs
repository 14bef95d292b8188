use super::ModelParams;
use crate::error::{Error, Result};

/// Adam with decoupled weight decay, applied only to tensors flagged for
/// decay (the dense weight matrices).
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Prototype columns are re-normalized and every parameter is
    /// rounded to float32 storage afterwards.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64, weight_decay: f64) -> Result<()> {
        if !params.same_shape(grads) || params.tensors().len() != self.first.len() {
            return Err(Error::ShapeMismatch("optimizer, parameter and gradient shapes differ".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay: Vec<bool> = params.tensor_specs().into_iter().map(|s| s.2).collect();
        for (ti, (p, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            let (m, v) = (&mut self.first[ti], &mut self.second[ti]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                if decay[ti] {
                    p[j] -= lr * weight_decay * p[j];
                }
                p[j] -= lr * update;
            }
        }
        params.head.normalize_columns()?;
        params.round_to_f32();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn first_step_moves_against_gradient_by_lr() {
        let cfg = ModelConfig { hidden: vec![3], embed_dim: 2, prototypes: 2 };
        let mut p = ModelParams::init(&cfg, &mut crate::rng::stream(1, 0)).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.encoder.layers[0].bias.fill(1.0);
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &g, 1e-2, 0.0).unwrap();
        for (a, b) in p.encoder.layers[0].bias.iter().zip(before.encoder.layers[0].bias.iter()) {
            assert!((b - a - 1e-2).abs() < 1e-6);
        }
        assert_eq!(p.encoder.layers[0].weight, before.encoder.layers[0].weight);
    }

    #[test]
    fn weight_decay_shrinks_weights_only() {
        let cfg = ModelConfig { hidden: vec![3], embed_dim: 2, prototypes: 2 };
        let mut p = ModelParams::init(&cfg, &mut crate::rng::stream(1, 0)).unwrap();
        p.encoder.layers[0].bias.fill(0.5);
        let before = p.clone();
        let g = p.zeros_like();
        AdamW::new(&p).step(&mut p, &g, 0.1, 0.5).unwrap();
        assert!(p.encoder.layers[0].weight.iter().zip(before.encoder.layers[0].weight.iter()).all(|(a, b)| a.abs() <= b.abs()));
        assert_eq!(p.encoder.layers[0].bias, before.encoder.layers[0].bias);
    }
}
