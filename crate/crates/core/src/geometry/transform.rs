use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};

/// `p ↦ scale · R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidSimilarity {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub scale: f64,
}

impl Default for RigidSimilarity {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidSimilarity {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros(), scale: 1.0 }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3, scale: f64) -> Result<Self> {
        let t = Self { rotation, translation, scale };
        t.validate(1e-9)?;
        Ok(t)
    }

    /// Checks `RᵀR = I`, `det R = 1` and `scale > 0` within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        let det = self.rotation.determinant();
        if ortho > tol || (det - 1.0).abs() > tol {
            return Err(Error::DegenerateGeometry(format!(
                "rotation not special orthogonal (|RᵀR−I|={ortho:e}, det={det})"
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateGeometry(format!("invalid scale {}", self.scale)));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &RigidSimilarity) -> RigidSimilarity {
        RigidSimilarity {
            rotation: self.rotation * first.rotation,
            translation: self.scale * (self.rotation * first.translation) + self.translation,
            scale: self.scale * first.scale,
        }
    }

    pub fn inverse(&self) -> RigidSimilarity {
        let rt = self.rotation.transpose();
        RigidSimilarity {
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
            scale: 1.0 / self.scale,
        }
    }

    /// Rotation angle of `R` in radians.
    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Transformed copy of `cloud`; normals are rotated, colors kept.
    pub fn apply_to_cloud(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let positions = cloud.positions().iter().map(|p| self.apply(p)).collect();
        let mut out = cloud.with_positions(positions)?;
        if let Some(normals) = cloud.normals() {
            out.set_normals_unchecked(normals.iter().map(|n| (self.rotation * n).normalize()).collect());
        }
        Ok(out)
    }
}

/// Minimal rotation carrying unit vector `from` onto unit vector `to`.
pub fn rotation_between(from: &Vec3, to: &Vec3) -> Matrix3<f64> {
    let a = from.normalize();
    let b = to.normalize();
    let v = a.cross(&b);
    let c = a.dot(&b);
    if c < -1.0 + 1e-12 {
        // antiparallel: half turn about any axis orthogonal to `a`
        let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let axis = a.cross(&helper).normalize();
        return 2.0 * axis * axis.transpose() - Matrix3::identity();
    }
    let vx = v.cross_matrix();
    Matrix3::identity() + vx + vx * vx / (1.0 + c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: [f64; 3]) -> Option<Vec3> {
        let v = Vec3::new(v[0], v[1], v[2]);
        (v.norm() > 1e-3).then(|| v.normalize())
    }

    #[test]
    fn antiparallel_rotation_is_valid() {
        let r = rotation_between(&-Vec3::z(), &Vec3::z());
        assert!((r * -Vec3::z() - Vec3::z()).norm() < 1e-12);
        RigidSimilarity::new(r, Vec3::zeros(), 1.0).unwrap();
    }

    #[test]
    fn inverse_round_trips() {
        let r = rotation_between(&Vec3::new(1.0, 2.0, 3.0), &Vec3::z());
        let t = RigidSimilarity::new(r, Vec3::new(0.5, -1.0, 2.0), 2.5).unwrap();
        let p = Vec3::new(0.3, 0.7, -0.2);
        assert!((t.inverse().apply(&t.apply(&p)) - p).norm() < 1e-12);
        let composed = t.inverse().after(&t);
        assert!((composed.rotation - Matrix3::identity()).abs().max() < 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_between_is_special_orthogonal(a in prop::array::uniform3(-1.0f64..1.0), b in prop::array::uniform3(-1.0f64..1.0)) {
            let (Some(a), Some(b)) = (unit(a), unit(b)) else { return Ok(()); };
            let r = rotation_between(&a, &b);
            prop_assert!((r * a - b).norm() < 1e-9);
            prop_assert!(RigidSimilarity::new(r, Vec3::zeros(), 1.0).is_ok());
        }
    }
}
