use super::plane::{fit_plane_least_squares, Plane};
use super::transform::{rotation_between, RigidSimilarity};
use super::{PointCloud, Vec3};
use crate::error::Result;

/// Rotates `cloud` so `plane` becomes `z = 0` with its normal along +Z.
///
/// The normal is oriented so that the majority of valid points lie on its
/// positive side. After the coarse rotation the plane inliers (within
/// `plane.threshold` of `z = 0`) are refit by least squares and the residual
/// tilt and height are removed. The returned transform has unit scale and
/// maps input coordinates to output coordinates.
pub fn align_z_up(cloud: &PointCloud, plane: &Plane) -> Result<(PointCloud, RigidSimilarity)> {
    let (mut above, mut below) = (0usize, 0usize);
    for (p, _) in cloud.positions().iter().zip(cloud.validity()).filter(|(_, v)| **v) {
        let d = plane.signed_distance(p);
        if d > 0.0 {
            above += 1;
        } else if d < 0.0 {
            below += 1;
        }
    }
    let plane = if below > above { plane.flipped() } else { *plane };

    let coarse = RigidSimilarity {
        rotation: rotation_between(&plane.normal, &Vec3::z()),
        translation: Vec3::new(0.0, 0.0, -plane.offset),
        scale: 1.0,
    };

    let moved: Vec<Vec3> = cloud
        .positions()
        .iter()
        .zip(cloud.validity())
        .filter(|(_, v)| **v)
        .map(|(p, _)| coarse.apply(p))
        .collect();
    let inliers = moved.iter().filter(|p| p.z.abs() <= plane.threshold);
    let transform = match fit_plane_least_squares(inliers) {
        Some(fit) => {
            let refine = RigidSimilarity {
                rotation: rotation_between(&fit.normal, &Vec3::z()),
                translation: Vec3::new(0.0, 0.0, -fit.normal.dot(&fit.centroid)),
                scale: 1.0,
            };
            refine.after(&coarse)
        }
        None => coarse,
    };
    Ok((transform.apply_to_cloud(cloud)?, transform))
}
