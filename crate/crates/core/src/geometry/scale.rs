use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::transform::RigidSimilarity;
use super::{PointCloud, Vec3};
use crate::error::{invalid, Error, Result};

/// Length of the axis-aligned bounding-box diagonal of the valid points.
pub fn aabb_diagonal(cloud: &PointCloud) -> Result<f64> {
    let (lo, hi) = cloud.bounds().ok_or_else(|| Error::EmptyCloud("no valid points".into()))?;
    Ok((hi - lo).norm())
}

/// Scales the cloud about its centroid so the diagonal becomes `s_target`.
pub fn scale_align(cloud: &PointCloud, s_target: f64) -> Result<(PointCloud, RigidSimilarity)> {
    let centroid = cloud.centroid().ok_or_else(|| Error::EmptyCloud("no valid points".into()))?;
    scale_align_about(cloud, s_target, &centroid)
}

/// Scales the cloud about `anchor` by `α = s_target / s_current`.
pub fn scale_align_about(cloud: &PointCloud, s_target: f64, anchor: &Vec3) -> Result<(PointCloud, RigidSimilarity)> {
    if !(s_target > 0.0 && s_target.is_finite()) {
        return Err(invalid(format!("target scale must be positive, got {s_target}")));
    }
    let current = aabb_diagonal(cloud)?;
    if current == 0.0 {
        return Err(Error::DegenerateGeometry("zero bounding-box diagonal".into()));
    }
    let alpha = s_target / current;
    let transform = RigidSimilarity {
        rotation: nalgebra::Matrix3::identity(),
        translation: anchor * (1.0 - alpha),
        scale: alpha,
    };
    let positions = cloud.positions().iter().map(|p| anchor + alpha * (p - anchor)).collect();
    Ok((cloud.with_positions(positions)?, transform))
}

/// Log-normal distribution of target scene diagonals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleDistribution {
    pub median: f64,
    pub log_std: f64,
}

impl Default for ScaleDistribution {
    fn default() -> Self {
        Self { median: 8.0, log_std: 0.25 }
    }
}

impl ScaleDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        if self.log_std == 0.0 {
            return Ok(self.median);
        }
        let dist = LogNormal::new(self.median.ln(), self.log_std)
            .map_err(|e| invalid(format!("scale distribution: {e}")))?;
        Ok(dist.sample(rng))
    }
}
