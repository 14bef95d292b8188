//! Teacher/student view generation: global and local crops, grid masking and
//! noise augmentation.
//!
//! Every view keeps the source index of each of its points, the linear map
//! and translation it was moved by, and the jitter added afterwards, so the
//! original coordinates can always be recovered.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{KdTree, PointCloud, Vec3};
use crate::rng::{derive_seed, stream, Rng};

const VIEW_STREAM: u64 = 0x5649_4557;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    pub global_views: usize,
    pub local_views: usize,
    /// Fraction of scene points in a global crop, `[min, max]`.
    pub global_crop: [f64; 2],
    pub local_crop: [f64; 2],
    pub rotate_z: bool,
    /// Probability of mirroring x and (independently) y.
    pub flip_prob: f64,
    pub jitter_sigma: f64,
    /// Half-width of the uniform per-channel color shift.
    pub color_jitter: f64,
    pub mask_grid: f64,
    pub mask_ratio: f64,
    pub noise_sigma: f64,
    pub noise_dropout: f64,
    pub min_points: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            global_views: 2,
            local_views: 4,
            global_crop: [0.4, 1.0],
            local_crop: [0.10, 0.25],
            rotate_z: true,
            flip_prob: 0.5,
            jitter_sigma: 0.005,
            color_jitter: 0.05,
            mask_grid: 0.1,
            mask_ratio: 0.3,
            noise_sigma: 0.01,
            noise_dropout: 0.1,
            min_points: 256,
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |r: &[f64; 2]| 0.0 < r[0] && r[0] <= r[1] && r[1] <= 1.0;
        if self.global_views == 0 || !frac_ok(&self.global_crop) || !frac_ok(&self.local_crop) {
            return Err(invalid("view counts and crop fractions must be positive, crop fractions in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob)
            || !(0.0..=1.0).contains(&self.mask_ratio)
            || !(0.0..1.0).contains(&self.noise_dropout)
        {
            return Err(invalid("flip probability and mask ratio must lie in [0, 1], dropout in [0, 1)"));
        }
        if !(self.jitter_sigma >= 0.0 && self.color_jitter >= 0.0 && self.noise_sigma >= 0.0 && self.mask_grid > 0.0) {
            return Err(invalid("jitter and noise scales must be non-negative, mask grid positive"));
        }
        Ok(())
    }
}

/// `p ↦ linear · p + translation`; `linear` is orthogonal (rotation, possibly
/// composed with mirrors).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewTransform {
    pub linear: Matrix3<f64>,
    pub translation: Vec3,
}

impl ViewTransform {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.linear * p + self.translation
    }

    pub fn invert(&self, q: &Vec3) -> Vec3 {
        self.linear.transpose() * (q - self.translation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub cloud: PointCloud,
    /// Index into the scene for every view point.
    pub source_indices: Vec<usize>,
    pub transform: ViewTransform,
    /// Coordinate jitter added after the transform.
    pub jitter: Vec<Vec3>,
}

impl View {
    pub fn len(&self) -> usize {
        self.source_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_indices.is_empty()
    }

    /// Scene-frame positions undone from the view coordinates.
    pub fn recovered_positions(&self) -> Vec<Vec3> {
        self.cloud
            .positions()
            .iter()
            .zip(&self.jitter)
            .map(|(q, j)| self.transform.invert(&(q - j)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub global_views: Vec<View>,
    pub local_views: Vec<View>,
    /// Mask over each global view, used when the student sees it masked.
    pub masks: Vec<Vec<bool>>,
}

/// Builds the global and local views of `scene`.
///
/// The first global crop is centered on a random point; later global crops
/// are centered on a point of the first, and local crops on a point of any
/// global crop, so all views overlap.
pub fn make_views(scene: &PointCloud, seed: u64, config: &ViewConfig) -> Result<ViewSet> {
    config.validate()?;
    let valid = scene.valid_indices();
    if valid.len() < config.min_points.max(1) {
        return Err(Error::EmptyCloud(format!(
            "scene has {} valid points, views need at least {}",
            valid.len(),
            config.min_points
        )));
    }
    let mut rng = stream(seed, VIEW_STREAM);
    let tree = KdTree::with_indices(scene.positions(), valid.clone());

    let mut global_views = Vec::with_capacity(config.global_views);
    for g in 0..config.global_views {
        let center = if g == 0 {
            valid[rng.random_range(0..valid.len())]
        } else {
            let first: &View = &global_views[0];
            first.source_indices[rng.random_range(0..first.len())]
        };
        global_views.push(crop_view(scene, &tree, center, config.global_crop, config, &mut rng)?);
    }
    let mut local_views = Vec::with_capacity(config.local_views);
    for _ in 0..config.local_views {
        let g: &View = &global_views[rng.random_range(0..global_views.len())];
        let center = g.source_indices[rng.random_range(0..g.len())];
        local_views.push(crop_view(scene, &tree, center, config.local_crop, config, &mut rng)?);
    }
    let masks = global_views
        .iter()
        .enumerate()
        .map(|(g, v)| grid_mask(&v.cloud, config.mask_grid, config.mask_ratio, derive_seed(seed, 0x4d41_534b + g as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewSet { global_views, local_views, masks })
}

fn crop_view(
    scene: &PointCloud,
    tree: &KdTree,
    center: usize,
    fraction: [f64; 2],
    config: &ViewConfig,
    rng: &mut Rng,
) -> Result<View> {
    let f = if fraction[0] < fraction[1] { rng.random_range(fraction[0]..=fraction[1]) } else { fraction[0] };
    let n = ((f * tree.len() as f64).round() as usize).clamp(1, tree.len());
    let c = scene.positions()[center];
    let mut source_indices: Vec<usize> = tree.knn(&c, n, None).into_iter().map(|nb| nb.index).collect();
    source_indices.sort_unstable();

    let theta = if config.rotate_z { rng.random_range(0.0..TAU) } else { 0.0 };
    let (s, co) = theta.sin_cos();
    let rot = Matrix3::new(co, -s, 0.0, s, co, 0.0, 0.0, 0.0, 1.0);
    let fx = if rng.random_bool(config.flip_prob) { -1.0 } else { 1.0 };
    let fy = if rng.random_bool(config.flip_prob) { -1.0 } else { 1.0 };
    let linear = rot * Matrix3::from_diagonal(&Vec3::new(fx, fy, 1.0));
    let transform = ViewTransform { linear, translation: -(linear * c) };

    let jitter_dist = Normal::new(0.0, config.jitter_sigma).map_err(|e| invalid(e.to_string()))?;
    let shift = Vec3::from_fn(|_, _| if config.color_jitter > 0.0 { rng.random_range(-config.color_jitter..=config.color_jitter) } else { 0.0 });

    let mut positions = Vec::with_capacity(n);
    let mut jitter = Vec::with_capacity(n);
    for &i in &source_indices {
        let j = if config.jitter_sigma > 0.0 {
            Vec3::new(jitter_dist.sample(rng), jitter_dist.sample(rng), jitter_dist.sample(rng))
        } else {
            Vec3::zeros()
        };
        positions.push(transform.apply(&scene.positions()[i]) + j);
        jitter.push(j);
    }
    let mut cloud = PointCloud::new(positions)?;
    if let Some(colors) = scene.colors() {
        cloud = cloud.with_colors(
            source_indices
                .iter()
                .map(|&i| (colors[i] + shift).map(|v| v.clamp(0.0, 1.0)))
                .collect(),
        )?;
    }
    if let Some(normals) = scene.normals() {
        cloud.set_normals_unchecked(source_indices.iter().map(|&i| (linear * normals[i]).normalize()).collect());
    }
    Ok(View { cloud, source_indices, transform, jitter })
}

/// Voxel-aligned mask. Voxels of side `grid_size` are drawn in random order
/// until the masked fraction first reaches `mask_ratio`.
pub fn grid_mask(view: &PointCloud, grid_size: f64, mask_ratio: f64, seed: u64) -> Result<Vec<bool>> {
    if !(grid_size > 0.0) || !(0.0..=1.0).contains(&mask_ratio) {
        return Err(invalid(format!("grid size {grid_size} / mask ratio {mask_ratio} out of range")));
    }
    let n = view.len();
    let mut mask = vec![false; n];
    if n == 0 {
        return Ok(mask);
    }
    let mut voxels: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in view.positions().iter().enumerate() {
        let key = [0, 1, 2].map(|a| (p[a] / grid_size).floor() as i64);
        voxels.entry(key).or_default().push(i);
    }
    let mut cells: Vec<Vec<usize>> = voxels.into_values().collect();
    cells.shuffle(&mut stream(seed, 0));
    let mut masked = 0usize;
    for cell in cells {
        if masked as f64 >= mask_ratio * n as f64 {
            break;
        }
        masked += cell.len();
        for i in cell {
            mask[i] = true;
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyView {
    pub cloud: PointCloud,
    /// Index into the input view for every surviving point.
    pub kept: Vec<usize>,
}

/// Drops each point with probability `dropout` and perturbs the survivors'
/// coordinates by isotropic Gaussian noise of std `sigma`.
pub fn add_noise(view: &PointCloud, sigma: f64, dropout: f64, seed: u64) -> Result<NoisyView> {
    if !(sigma >= 0.0) || !(0.0..1.0).contains(&dropout) {
        return Err(invalid(format!("noise sigma {sigma} / dropout {dropout} out of range")));
    }
    let mut rng = stream(seed, 0x4e4f_4953);
    let noise = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
    let mut kept = Vec::with_capacity(view.len());
    let mut positions = Vec::with_capacity(view.len());
    for (i, p) in view.positions().iter().enumerate() {
        if dropout > 0.0 && rng.random_bool(dropout) {
            continue;
        }
        let offset = if sigma > 0.0 { Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)) } else { Vec3::zeros() };
        kept.push(i);
        positions.push(p + offset);
    }
    let cloud = view.select(&kept).with_positions(positions)?;
    Ok(NoisyView { cloud, kept })
}
