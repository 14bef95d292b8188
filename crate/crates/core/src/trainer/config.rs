use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::SigmaMode;
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::schedule::Ramp;
use crate::views::ViewConfig;

/// Everything a training run needs. Every field has a default, so a JSON
/// config only has to name what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub student_temperature: f64,
    pub teacher_temperature: Ramp,
    /// Laplacian coefficient λ; `loss.lambda` is not used during training.
    pub lambda: Ramp,
    pub loss: LossConfig,
    pub ema_momentum: Ramp,
    pub weight_decay: Ramp,
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub warmup_fraction: f64,
    pub sinkhorn_iterations: usize,
    pub model: ModelConfig,
    pub views: ViewConfig,
    pub knn_k: usize,
    pub max_radius: f64,
    pub sigma: SigmaMode,
    pub correspondence_cutoff: f64,
    /// Scenes are randomly downsampled to this many points before training.
    pub scene_points: usize,
    /// Neighborhood size for normals of scenes that carry none.
    pub normals_k: usize,
    /// Adds wall-clock time to the metrics, which makes them non-reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            seed: 0,
            student_temperature: 0.1,
            teacher_temperature: Ramp::linear(0.04, 0.07),
            lambda: Ramp::linear(2e-4, 3e-3),
            loss: LossConfig::default(),
            ema_momentum: Ramp::cosine(0.994, 1.0),
            weight_decay: Ramp::linear(0.04, 0.10),
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            warmup_fraction: 0.05,
            sinkhorn_iterations: 3,
            model: ModelConfig::default(),
            views: ViewConfig::default(),
            knn_k: 24,
            max_radius: 0.08,
            sigma: SigmaMode::Adaptive,
            correspondence_cutoff: 0.05,
            scene_points: 1024,
            normals_k: 16,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    /// Same run with both regularizers switched off.
    pub fn without_regularizers(&self) -> Self {
        let mut c = self.clone();
        c.lambda = Ramp::constant(0.0);
        c.loss.mu = 0.0;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.views.validate()?;
        if self.steps == 0 || self.batch_size == 0 || self.sinkhorn_iterations == 0 || self.knn_k == 0 {
            return Err(invalid("steps, batch size, Sinkhorn iterations and knn_k must be positive"));
        }
        if self.views.global_views != 2 {
            return Err(invalid("training uses exactly two global views"));
        }
        let positive = [
            self.student_temperature,
            self.teacher_temperature.start,
            self.teacher_temperature.end,
            self.learning_rate,
            self.max_radius,
            self.correspondence_cutoff,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("temperatures, learning rate, radius and cutoff must be positive"));
        }
        let ramps = [self.lambda, self.weight_decay];
        if ramps.iter().any(|r| r.start < 0.0 || r.end < 0.0) || self.final_learning_rate < 0.0 {
            return Err(invalid("λ, weight decay and final learning rate must be non-negative"));
        }
        let m = self.ema_momentum;
        if !(0.0..=1.0).contains(&m.start) || !(0.0..=1.0).contains(&m.end) {
            return Err(invalid("EMA momentum must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(invalid("warmup fraction must lie in [0, 1]"));
        }
        if self.scene_points < self.views.min_points {
            return Err(invalid("scene_points is below the view minimum"));
        }
        Ok(())
    }
}
