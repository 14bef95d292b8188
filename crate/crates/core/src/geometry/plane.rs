use nalgebra::{Matrix3, SymmetricEigen};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::rng;

/// Points `p` with `normal · p = offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
    /// Inlier distance used to detect the plane.
    pub threshold: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Same plane with the normal reversed.
    pub fn flipped(&self) -> Plane {
        Plane { normal: -self.normal, offset: -self.offset, ..*self }
    }

    /// Angle between the normal and `axis`, in degrees.
    pub fn angle_to_deg(&self, axis: &Vec3) -> f64 {
        self.normal.dot(&axis.normalize()).clamp(-1.0, 1.0).acos().to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// `None` selects [`default_inlier_threshold`] from the scene diagonal.
    pub inlier_threshold: Option<f64>,
    pub min_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 512, inlier_threshold: None, min_inlier_ratio: 0.15, seed: 0 }
    }
}

/// `0.02 × diagonal`, capped at 5 cm.
pub fn default_inlier_threshold(diagonal: f64) -> f64 {
    (0.02 * diagonal).min(0.05)
}

/// Least-squares plane through a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub normal: Vec3,
    pub centroid: Vec3,
    /// Covariance eigenvalues, ascending.
    pub eigenvalues: [f64; 3],
}

/// Centroid plus the direction of least variance. `None` for fewer than 3
/// points or a rank-deficient (collinear) set.
pub fn fit_plane_least_squares<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<PlaneFit> {
    let pts: Vec<&Vec3> = points.into_iter().collect();
    if pts.len() < 3 {
        return None;
    }
    let centroid = pts.iter().fold(Vec3::zeros(), |acc, p| acc + *p) / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = *p - centroid;
        cov += d * d.transpose();
    }
    cov /= pts.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.map(|i| eig.eigenvalues[i]);
    if eigenvalues[1] <= 1e-12 * eigenvalues[2].max(f64::MIN_POSITIVE) {
        return None;
    }
    let normal = canonical_sign(eig.eigenvectors.column(order[0]).normalize());
    Some(PlaneFit { normal, centroid, eigenvalues })
}

/// Flips `n` so its first non-negligible component (z, then x, then y) is positive.
fn canonical_sign(n: Vec3) -> Vec3 {
    let key = if n.z.abs() > 1e-12 { n.z } else if n.x.abs() > 1e-12 { n.x } else { n.y };
    if key < 0.0 {
        -n
    } else {
        n
    }
}

fn count_inliers(points: &[Vec3], normal: &Vec3, offset: f64, threshold: f64) -> usize {
    points.iter().filter(|p| (normal.dot(p) - offset).abs() <= threshold).count()
}

/// RANSAC detection of the plane with the most inliers.
///
/// Each iteration fits a plane through three sampled points and counts points
/// within `inlier_threshold`; the winner is refit by least squares on its
/// inliers. Returns `Ok(None)` when the refit plane holds less than 15% of
/// the points or every sample is collinear.
pub fn detect_dominant_plane(cloud: &PointCloud, iterations: usize, inlier_threshold: f64, seed: u64) -> Result<Option<Plane>> {
    detect_dominant_plane_with(
        cloud,
        &RansacConfig { iterations, inlier_threshold: Some(inlier_threshold), seed, ..RansacConfig::default() },
    )
}

pub fn detect_dominant_plane_with(cloud: &PointCloud, config: &RansacConfig) -> Result<Option<Plane>> {
    let (compact, _) = cloud.compact();
    let points = compact.positions();
    if points.len() < 3 {
        return Err(Error::EmptyCloud(format!("plane detection needs 3 points, got {}", points.len())));
    }
    let threshold = match config.inlier_threshold {
        Some(t) => t,
        None => default_inlier_threshold(super::aabb_diagonal(&compact)?),
    };
    if !(threshold > 0.0) {
        return Err(Error::InvalidInput(format!("inlier threshold must be positive, got {threshold}")));
    }

    let mut rng = rng::stream(config.seed, 0x504c_414e);
    let mut best: Option<(usize, Vec3, f64)> = None;
    for _ in 0..config.iterations.max(1) {
        let s = sample(&mut rng, points.len(), 3);
        let (a, b, c) = (points[s.index(0)], points[s.index(1)], points[s.index(2)]);
        let (e1, e2) = (b - a, c - a);
        let cross = e1.cross(&e2);
        let scale = e1.norm() * e2.norm();
        if scale == 0.0 || cross.norm() <= 1e-9 * scale {
            continue;
        }
        let normal = cross.normalize();
        let offset = normal.dot(&a);
        let count = count_inliers(points, &normal, offset, threshold);
        if best.is_none_or(|(c, _, _)| count > c) {
            best = Some((count, normal, offset));
        }
    }
    let Some((_, normal, offset)) = best else {
        return Ok(None);
    };

    let inliers = points.iter().filter(|p| (normal.dot(p) - offset).abs() <= threshold);
    let Some(fit) = fit_plane_least_squares(inliers) else {
        return Ok(None);
    };
    let offset = fit.normal.dot(&fit.centroid);
    let inlier_count = count_inliers(points, &fit.normal, offset, threshold);
    let inlier_ratio = inlier_count as f64 / points.len() as f64;
    if inlier_ratio < config.min_inlier_ratio {
        return Ok(None);
    }
    Ok(Some(Plane { normal: fit.normal, offset, inlier_count, inlier_ratio, threshold }))
}
