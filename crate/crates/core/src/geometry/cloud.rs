use nalgebra::Vector3;

use crate::error::{invalid, Error, Result};

pub type Vec3 = Vector3<f64>;

const NORMAL_TOLERANCE: f64 = 1e-6;

/// Positions in meters with optional per-point colors and normals.
///
/// Invariants are checked on construction: finite positions, colors in
/// `[0, 1]`, unit normals, and every optional array as long as `positions`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    colors: Option<Vec<Vec3>>,
    normals: Option<Vec<Vec3>>,
    valid: Vec<bool>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("position {i} is not finite")));
        }
        let valid = vec![true; positions.len()];
        Ok(Self { positions, colors: None, normals: None, valid })
    }

    pub fn from_arrays(positions: &[[f64; 3]]) -> Result<Self> {
        Self::new(positions.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    pub fn with_colors(mut self, colors: Vec<Vec3>) -> Result<Self> {
        self.check_len("colors", colors.len())?;
        if let Some(i) = colors
            .iter()
            .position(|c| !c.iter().all(|v| (0.0..=1.0).contains(v)))
        {
            return Err(invalid(format!("color {i} outside [0, 1]")));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        self.check_len("normals", normals.len())?;
        if let Some(i) = normals
            .iter()
            .position(|n| (n.norm() - 1.0).abs() > NORMAL_TOLERANCE || !n.iter().all(|v| v.is_finite()))
        {
            return Err(invalid(format!("normal {i} is not unit length")));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_validity(mut self, valid: Vec<bool>) -> Result<Self> {
        self.check_len("validity mask", valid.len())?;
        self.valid = valid;
        Ok(self)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{what} has {len} entries, cloud has {} points",
                self.positions.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[Vec3]> {
        self.colors.as_deref()
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.valid[i]).collect()
    }

    /// Sub-cloud made of `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
            valid: indices.iter().map(|&i| self.valid[i]).collect(),
        }
    }

    /// Drops invalid points; returns the compact cloud and the surviving source indices.
    pub fn compact(&self) -> (PointCloud, Vec<usize>) {
        let idx = self.valid_indices();
        (self.select(&idx), idx)
    }

    /// Same attributes with new positions (finite check applied).
    pub fn with_positions(&self, positions: Vec<Vec3>) -> Result<PointCloud> {
        self.check_len("positions", positions.len())?;
        let mut out = PointCloud::new(positions)?;
        out.colors = self.colors.clone();
        out.normals = self.normals.clone();
        out.valid = self.valid.clone();
        Ok(out)
    }

    pub(crate) fn set_normals_unchecked(&mut self, normals: Vec<Vec3>) {
        debug_assert_eq!(normals.len(), self.positions.len());
        self.normals = Some(normals);
    }

    /// Mean of the valid positions.
    pub fn centroid(&self) -> Option<Vec3> {
        let mut sum = Vec3::zeros();
        let mut n = 0usize;
        for (p, _) in self.positions.iter().zip(&self.valid).filter(|(_, v)| **v) {
            sum += p;
            n += 1;
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Component-wise (min, max) of the valid positions.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.positions.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(p, _)| p);
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }
}
