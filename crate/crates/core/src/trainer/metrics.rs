use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub total: f64,
    pub unmask: f64,
    pub mask: f64,
    pub roll: f64,
    pub laplacian: f64,
    pub consistency: f64,
    pub lambda: f64,
    pub mu: f64,
    pub teacher_temperature: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub ema_momentum: f64,
    pub usage_entropy: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Running mean of per-point prototype distributions.
#[derive(Debug, Clone, Default)]
pub struct UsageAccumulator {
    sum: Option<Array1<f64>>,
    rows: usize,
}

impl UsageAccumulator {
    pub fn add(&mut self, assignments: &Array2<f64>) -> Result<()> {
        let s = assignments.sum_axis(Axis(0));
        match &mut self.sum {
            Some(acc) if acc.len() == s.len() => *acc += &s,
            Some(_) => return Err(invalid("prototype count changed between batches")),
            None => self.sum = Some(s),
        }
        self.rows += assignments.nrows();
        Ok(())
    }

    /// Entropy in nats of the mean distribution.
    pub fn entropy(&self) -> Result<f64> {
        match &self.sum {
            Some(sum) if self.rows > 0 => {
                let mean = sum / self.rows as f64;
                Ok(-mean.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>())
            }
            _ => Err(invalid("no assignments accumulated")),
        }
    }
}

/// Entropy (nats) of the mean row of `assignments`; `ln K` for uniform
/// usage, 0 when every point picks the same prototype.
pub fn prototype_usage_entropy(assignments: &Array2<f64>) -> Result<f64> {
    let mut acc = UsageAccumulator::default();
    acc.add(assignments)?;
    acc.entropy()
}
