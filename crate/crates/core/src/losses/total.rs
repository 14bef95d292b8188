use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::LaplacianForm;
use crate::error::{invalid, Error, Result};
use crate::schedule::Schedule;

/// Loss weights and regularizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub w_unmask: f64,
    pub w_mask: f64,
    pub w_roll: f64,
    /// Laplacian coefficient when no schedule is supplied.
    pub lambda: f64,
    pub mu: f64,
    pub huber_delta: f64,
    pub laplacian_form: LaplacianForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_unmask: 4.0,
            w_mask: 2.0,
            w_roll: 2.0,
            lambda: 3e-3,
            mu: 0.05,
            huber_delta: 0.5,
            laplacian_form: LaplacianForm::HuberResidual,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.w_unmask, self.w_mask, self.w_roll, self.lambda, self.mu];
        if nonneg.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(invalid("loss weights and coefficients must be finite and non-negative"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(invalid(format!("huber delta must be positive, got {}", self.huber_delta)));
        }
        Ok(())
    }
}

/// Which student view a gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewSlot {
    MaskedGlobal(u8),
    UnmaskedGlobal(u8),
    Local(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GradSpace {
    /// Prototype logits (before the temperature).
    Logits,
    /// Normalized backbone embeddings.
    Embeddings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GradKey {
    pub scene: usize,
    pub view: ViewSlot,
    pub space: GradSpace,
}

/// Gradients keyed by the student tensor they apply to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientSet(pub BTreeMap<GradKey, Array2<f64>>);

impl GradientSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(key: GradKey, grad: Array2<f64>) -> Self {
        let mut g = Self::new();
        g.0.insert(key, grad);
        g
    }

    pub fn get(&self, key: &GradKey) -> Option<&Array2<f64>> {
        self.0.get(key)
    }

    /// `self += scale · grad` at `key`.
    pub fn accumulate(&mut self, key: GradKey, grad: &Array2<f64>, scale: f64) -> Result<()> {
        match self.0.get_mut(&key) {
            Some(existing) => {
                if existing.dim() != grad.dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "gradient for {key:?}: {:?} vs {:?}",
                        existing.dim(),
                        grad.dim()
                    )));
                }
                existing.scaled_add(scale, grad);
            }
            None => {
                self.0.insert(key, grad * scale);
            }
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) -> Result<()> {
        for (k, g) in &other.0 {
            self.accumulate(*k, g, scale)?;
        }
        Ok(())
    }

    pub fn scaled(&self, scale: f64) -> GradientSet {
        GradientSet(self.0.iter().map(|(k, g)| (*k, g * scale)).collect())
    }

    /// Largest absolute entry-wise difference over the union of keys.
    pub fn max_abs_diff(&self, other: &GradientSet) -> f64 {
        let mut worst: f64 = 0.0;
        for key in self.0.keys().chain(other.0.keys()) {
            let diff = match (self.0.get(key), other.0.get(key)) {
                (Some(a), Some(b)) if a.dim() == b.dim() => (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs())),
                (Some(a), None) | (None, Some(a)) => a.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                _ => f64::INFINITY,
            };
            worst = worst.max(diff);
        }
        worst
    }
}

/// One loss component: its value and gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grads: GradientSet,
}

/// The five components entering the total objective.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossParts {
    pub unmask: LossTerm,
    pub mask: LossTerm,
    pub roll: LossTerm,
    pub laplacian: LossTerm,
    pub consistency: LossTerm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub unmask: f64,
    pub mask: f64,
    pub roll: f64,
    pub laplacian: f64,
    pub consistency: f64,
    pub total: f64,
    pub lambda: f64,
    pub mu: f64,
    pub gradient: GradientSet,
}

impl LossBreakdown {
    pub fn clustering(&self, config: &LossConfig) -> f64 {
        config.w_unmask * self.unmask + config.w_mask * self.mask + config.w_roll * self.roll
    }
}

/// Total objective with λ taken from `lambda_schedule` at `step`.
pub fn total_loss(parts: &LossParts, config: &LossConfig, step: usize, lambda_schedule: &Schedule) -> Result<LossBreakdown> {
    total_loss_with_lambda(parts, config, lambda_schedule.value(step))
}

/// `w_u·unmask + w_m·mask + w_r·roll + λ·laplacian + μ·consistency`, with
/// gradients combined with the same coefficients.
pub fn total_loss_with_lambda(parts: &LossParts, config: &LossConfig, lambda: f64) -> Result<LossBreakdown> {
    let weighted = [
        (&parts.unmask, config.w_unmask),
        (&parts.mask, config.w_mask),
        (&parts.roll, config.w_roll),
        (&parts.laplacian, lambda),
        (&parts.consistency, config.mu),
    ];
    let mut total = 0.0;
    let mut gradient = GradientSet::new();
    for (term, w) in weighted {
        total += w * term.value;
        gradient.add_scaled(&term.grads, w)?;
    }
    Ok(LossBreakdown {
        unmask: parts.unmask.value,
        mask: parts.mask.value,
        roll: parts.roll.value,
        laplacian: parts.laplacian.value,
        consistency: parts.consistency.value,
        total,
        lambda,
        mu: config.mu,
        gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_parts() -> LossParts {
        let t = LossTerm { value: 1.0, grads: GradientSet::new() };
        LossParts { unmask: t.clone(), mask: t.clone(), roll: t.clone(), laplacian: t.clone(), consistency: t }
    }

    #[test]
    fn stated_weights_give_8_053() {
        let cfg = LossConfig { lambda: 3e-3, mu: 0.05, ..LossConfig::default() };
        let b = total_loss(&unit_parts(), &cfg, 0, &Schedule::constant(3e-3)).unwrap();
        assert!((b.total - 8.053).abs() < 1e-12);
    }

    #[test]
    fn zero_regularizers_reduce_to_clustering() {
        let cfg = LossConfig { mu: 0.0, ..LossConfig::default() };
        let mut parts = unit_parts();
        parts.unmask.value = 0.7;
        parts.mask.value = 1.3;
        parts.laplacian.value = 123.0;
        parts.consistency.value = 55.0;
        let b = total_loss_with_lambda(&parts, &cfg, 0.0).unwrap();
        assert_eq!(b.total, b.clustering(&cfg));
    }

    #[test]
    fn schedule_sets_lambda() {
        let s = Schedule::linear(2e-4, 3e-3, 100);
        let b = total_loss(&unit_parts(), &LossConfig::default(), 100, &s).unwrap();
        assert_eq!(b.lambda, 3e-3);
    }
}
