//! Synthetic rooms with ground truth, reproducing the defects of
//! reconstructed clouds: surface noise, doubled walls and floors, holes,
//! stray outliers, a global tilt and an arbitrary scale.
//!
//! The canonical room has its floor on `z = 0` and is centered on the origin
//! in x and y; tilt and scale are applied about the origin last.

use nalgebra::{Rotation3, Vector3};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{aabb_diagonal, PointCloud, RigidSimilarity, Vec3};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Room size along x, y, z in meters.
    pub extents: [f64; 3],
    /// Points per square meter on floor, walls and furniture.
    pub density: f64,
    pub ceiling_density: f64,
    pub furniture_count: usize,
    pub furniture_min: [f64; 3],
    pub furniture_max: [f64; 3],
    pub noise_sigma: f64,
    /// Fraction of floor and wall points duplicated as ghosts.
    pub ghost_fraction: f64,
    pub ghost_offset: f64,
    pub hole_count: usize,
    pub hole_radius: f64,
    pub outlier_count: usize,
    /// Outliers are drawn uniformly in a ball of this radius around the room
    /// center, outside the room box grown by `outlier_margin`.
    pub outlier_radius: f64,
    pub outlier_margin: f64,
    /// Axis-angle vector (radians).
    pub tilt: [f64; 3],
    pub scale: f64,
    /// Surface points kept before outliers are added.
    pub downsample: Option<usize>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            extents: [6.0, 5.0, 2.8],
            density: 500.0,
            ceiling_density: 150.0,
            furniture_count: 4,
            furniture_min: [0.4, 0.4, 0.4],
            furniture_max: [1.5, 1.0, 1.0],
            noise_sigma: 0.005,
            ghost_fraction: 0.0,
            ghost_offset: 0.05,
            hole_count: 0,
            hole_radius: 0.3,
            outlier_count: 0,
            outlier_radius: 12.0,
            outlier_margin: 1.0,
            tilt: [0.0; 3],
            scale: 1.0,
            downsample: Some(20_000),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointLabel {
    Surface,
    Ghost,
    Outlier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Floor,
    Wall,
    Ceiling,
    Furniture,
    Outlier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Floor normal after tilt (`n · p = 0` describes the floor).
    pub up_axis: Vec3,
    pub floor_offset: f64,
    /// Diagonal of the room box after scaling.
    pub room_diagonal: f64,
    /// Diagonal of the generated cloud including defects.
    pub cloud_diagonal: f64,
    pub labels: Vec<PointLabel>,
    pub parts: Vec<Part>,
    /// Canonical room → generated cloud.
    pub transform: RigidSimilarity,
}

impl GroundTruth {
    pub fn count(&self, label: PointLabel) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !self.extents.iter().all(|e| pos(*e)) || !pos(self.density) || !(self.ceiling_density >= 0.0) || !pos(self.scale) {
            return Err(invalid("extents, densities and scale must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ghost_fraction) || self.noise_sigma < 0.0 || self.hole_radius < 0.0 {
            return Err(invalid("ghost fraction must lie in [0, 1]; noise and hole radius non-negative"));
        }
        if (0..3).any(|a| !(self.furniture_min[a] > 0.0 && self.furniture_min[a] <= self.furniture_max[a])) {
            return Err(invalid("furniture size ranges must be positive and ordered"));
        }
        let [ex, ey, ez] = self.extents;
        let floor = ex * ey * self.density;
        let largest_wall = ex.max(ey) * ez * self.density;
        let ceiling = ex * ey * self.ceiling_density;
        if floor <= largest_wall || floor <= ceiling {
            return Err(invalid("the floor must be the largest plane: lower the ceiling density or the room height"));
        }
        if self.outlier_count > 0 {
            let half = Vec3::new(ex / 2.0, ey / 2.0, ez / 2.0).add_scalar(self.outlier_margin);
            if self.outlier_radius <= half.norm() {
                return Err(invalid("outlier radius must exceed the grown room box"));
            }
        }
        Ok(())
    }

    pub fn room_diagonal(&self) -> f64 {
        self.scale * Vec3::from(self.extents).norm()
    }
}

struct Sample {
    p: Vec3,
    color: Vec3,
    /// Inward surface normal, used for ghost offsets.
    n: Vec3,
    part: Part,
    label: PointLabel,
}

struct Sampler<'a, R> {
    rng: &'a mut R,
    noise: Normal<f64>,
    out: Vec<Sample>,
}

impl<R: rand::Rng> Sampler<'_, R> {
    /// Uniform samples on the rectangle `origin + s·u + t·v`, `s, t ∈ [0, 1]`.
    fn rect(&mut self, origin: Vec3, u: Vec3, v: Vec3, density: f64, n: Vec3, part: Part, color: Vec3) {
        let count = (u.cross(&v).norm() * density).round() as usize;
        for _ in 0..count {
            let (s, t): (f64, f64) = (self.rng.random(), self.rng.random());
            let jitter = Vec3::new(self.noise.sample(self.rng), self.noise.sample(self.rng), self.noise.sample(self.rng));
            let shade = self.rng.random_range(-0.03..0.03);
            self.out.push(Sample {
                p: origin + s * u + t * v + jitter,
                color: color.add_scalar(shade).map(|c| c.clamp(0.0, 1.0)),
                n,
                part,
                label: PointLabel::Surface,
            });
        }
    }
}

/// Generates a room and its ground truth. Deterministic per `spec.seed`.
pub fn generate_room(spec: &SceneSpec) -> Result<(PointCloud, GroundTruth)> {
    spec.validate()?;
    let mut rng = stream(spec.seed, 0x524f_4f4d);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| invalid(e.to_string()))?;
    let [ex, ey, ez] = spec.extents;
    let (hx, hy) = (ex / 2.0, ey / 2.0);
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
    let mut s = Sampler { rng: &mut rng, noise, out: Vec::new() };

    let floor_color = Vec3::new(0.55, 0.4, 0.3);
    let wall_color = Vec3::new(0.85, 0.83, 0.78);
    s.rect(Vec3::new(-hx, -hy, 0.0), ex * x, ey * y, spec.density, z, Part::Floor, floor_color);
    s.rect(Vec3::new(-hx, -hy, ez), ex * x, ey * y, spec.ceiling_density, -z, Part::Ceiling, Vec3::new(0.95, 0.95, 0.95));
    s.rect(Vec3::new(-hx, -hy, 0.0), ex * x, ez * z, spec.density, y, Part::Wall, wall_color);
    s.rect(Vec3::new(-hx, hy, 0.0), ex * x, ez * z, spec.density, -y, Part::Wall, wall_color);
    s.rect(Vec3::new(-hx, -hy, 0.0), ey * y, ez * z, spec.density, x, Part::Wall, wall_color);
    s.rect(Vec3::new(hx, -hy, 0.0), ey * y, ez * z, spec.density, -x, Part::Wall, wall_color);

    for _ in 0..spec.furniture_count {
        let size = Vec3::from_fn(|a, _| s.rng.random_range(spec.furniture_min[a]..=spec.furniture_max[a]));
        let size = Vector3::new(size.x.min(ex * 0.9), size.y.min(ey * 0.9), size.z.min(ez * 0.9));
        let lo = Vec3::new(s.rng.random_range(-hx..=hx - size.x), s.rng.random_range(-hy..=hy - size.y), 0.0);
        let color = Vec3::new(s.rng.random(), s.rng.random(), s.rng.random());
        let d = spec.density;
        let (sx, sy, sz) = (size.x * x, size.y * y, size.z * z);
        s.rect(lo + sz, sx, sy, d, z, Part::Furniture, color);
        s.rect(lo, sx, sz, d, -y, Part::Furniture, color);
        s.rect(lo + sy, sx, sz, d, y, Part::Furniture, color);
        s.rect(lo, sy, sz, d, -x, Part::Furniture, color);
        s.rect(lo + sx, sy, sz, d, x, Part::Furniture, color);
    }
    let mut points = s.out;

    let doubled: Vec<usize> = (0..points.len()).filter(|&i| matches!(points[i].part, Part::Floor | Part::Wall)).collect();
    let ghosts = (spec.ghost_fraction * doubled.len() as f64).round() as usize;
    for k in sample(&mut rng, doubled.len(), ghosts).into_iter().map(|k| doubled[k]).collect::<Vec<_>>() {
        let src = &points[k];
        points.push(Sample {
            p: src.p + spec.ghost_offset * src.n,
            color: src.color,
            n: src.n,
            part: src.part,
            label: PointLabel::Ghost,
        });
    }

    for _ in 0..spec.hole_count {
        if points.is_empty() {
            break;
        }
        let c = points[rng.random_range(0..points.len())].p;
        let r2 = spec.hole_radius * spec.hole_radius;
        points.retain(|q| (q.p - c).norm_squared() > r2);
    }

    if let Some(target) = spec.downsample {
        if points.len() > target {
            let mut keep = sample(&mut rng, points.len(), target).into_vec();
            keep.sort_unstable();
            let mut it = keep.into_iter().peekable();
            let mut idx = 0;
            points.retain(|_| {
                let take = it.peek() == Some(&idx);
                if take {
                    it.next();
                }
                idx += 1;
                take
            });
        }
    }

    let center = Vec3::new(0.0, 0.0, ez / 2.0);
    let half = Vec3::new(hx, hy, ez / 2.0).add_scalar(spec.outlier_margin);
    let mut placed = 0;
    while placed < spec.outlier_count {
        let p = Vec3::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        if p.norm_squared() > 1.0 {
            continue;
        }
        let q = center + spec.outlier_radius * p;
        let d = (q - center).abs();
        if d.x <= half.x && d.y <= half.y && d.z <= half.z {
            continue;
        }
        points.push(Sample {
            p: q,
            color: Vec3::new(rng.random(), rng.random(), rng.random()),
            n: z,
            part: Part::Outlier,
            label: PointLabel::Outlier,
        });
        placed += 1;
    }

    let tilt = Vec3::from(spec.tilt);
    let rotation = Rotation3::new(tilt).into_inner();
    let transform = RigidSimilarity::new(rotation, Vec3::zeros(), spec.scale)?;
    let cloud = PointCloud::new(points.iter().map(|s| transform.apply(&s.p)).collect())?
        .with_colors(points.iter().map(|s| s.color).collect())?;
    let cloud_diagonal = if cloud.is_empty() { 0.0 } else { aabb_diagonal(&cloud)? };
    let truth = GroundTruth {
        up_axis: rotation * z,
        floor_offset: 0.0,
        room_diagonal: spec.room_diagonal(),
        cloud_diagonal,
        labels: points.iter().map(|s| s.label).collect(),
        parts: points.iter().map(|s| s.part).collect(),
        transform,
    };
    Ok((cloud, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec { downsample: Some(2000), seed: 5, ..Default::default() };
        assert_eq!(generate_room(&spec).unwrap().0, generate_room(&spec).unwrap().0);
        let other = SceneSpec { seed: 6, ..spec };
        assert_ne!(generate_room(&spec).unwrap().0, generate_room(&other).unwrap().0);
    }

    #[test]
    fn ghost_share() {
        let spec = SceneSpec { ghost_fraction: 0.2, downsample: None, ..Default::default() };
        let (_, gt) = generate_room(&spec).unwrap();
        let surfaces = gt
            .labels
            .iter()
            .zip(&gt.parts)
            .filter(|(l, p)| **l == PointLabel::Surface && matches!(p, Part::Floor | Part::Wall))
            .count();
        let share = gt.count(PointLabel::Ghost) as f64 / surfaces as f64;
        assert!((share - 0.2).abs() < 0.01, "{share}");
    }

    #[test]
    fn outliers_stay_outside_room() {
        let spec = SceneSpec { outlier_count: 50, downsample: Some(1000), ..Default::default() };
        let (cloud, gt) = generate_room(&spec).unwrap();
        assert_eq!(gt.count(PointLabel::Outlier), 50);
        for (p, l) in cloud.positions().iter().zip(&gt.labels) {
            if *l == PointLabel::Outlier {
                assert!(p.x.abs() > 4.0 || p.y.abs() > 3.5 || p.z < -1.0 || p.z > 3.8);
            }
        }
    }

    #[test]
    fn tall_room_rejected() {
        let spec = SceneSpec { extents: [2.0, 2.0, 5.0], ..Default::default() };
        assert!(generate_room(&spec).is_err());
    }
}
