//! Time-varying scalar coefficients (temperatures, loss weights, momentum,
//! weight decay, learning rate).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Linear,
    Cosine,
}

/// Interpolates from `start` at step 0 to `end` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub start: f64,
    pub end: f64,
    pub total_steps: usize,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self { kind: ScheduleKind::Constant, start: value, end: value, total_steps: 1 }
    }

    pub fn linear(start: f64, end: f64, total_steps: usize) -> Self {
        Self { kind: ScheduleKind::Linear, start, end, total_steps: total_steps.max(1) }
    }

    pub fn cosine(start: f64, end: f64, total_steps: usize) -> Self {
        Self { kind: ScheduleKind::Cosine, start, end, total_steps: total_steps.max(1) }
    }

    /// Value at `step`. Steps past the end are clamped (with a warning).
    pub fn value(&self, step: usize) -> f64 {
        if self.kind == ScheduleKind::Constant {
            return self.start;
        }
        let total = self.total_steps.max(1);
        let step = if step > total {
            log::warn!("schedule step {step} beyond total {total}; clamping");
            total
        } else {
            step
        };
        let t = step as f64 / total as f64;
        let f = match self.kind {
            ScheduleKind::Constant => unreachable!(),
            ScheduleKind::Linear => t,
            ScheduleKind::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * t).cos()),
        };
        // exact at both endpoints
        self.start * (1.0 - f) + self.end * f
    }
}

/// A schedule whose length is fixed later by the run length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub kind: ScheduleKind,
    pub start: f64,
    pub end: f64,
}

impl Ramp {
    pub fn constant(value: f64) -> Self {
        Self { kind: ScheduleKind::Constant, start: value, end: value }
    }

    pub fn linear(start: f64, end: f64) -> Self {
        Self { kind: ScheduleKind::Linear, start, end }
    }

    pub fn cosine(start: f64, end: f64) -> Self {
        Self { kind: ScheduleKind::Cosine, start, end }
    }

    pub fn over(&self, total_steps: usize) -> Schedule {
        Schedule { kind: self.kind, start: self.start, end: self.end, total_steps: total_steps.max(1) }
    }
}

/// Linear warmup from zero to `base` followed by cosine annealing to `final_value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupCosine {
    pub base: f64,
    pub final_value: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl WarmupCosine {
    pub fn new(base: f64, final_value: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        let total_steps = total_steps.max(1);
        let warmup_steps = ((warmup_fraction * total_steps as f64).round() as usize).min(total_steps);
        Self { base, final_value, warmup_steps, total_steps }
    }

    pub fn value(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return self.base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps).max(1);
        Schedule::cosine(self.base, self.final_value, span).value(step - self.warmup_steps)
    }
}
