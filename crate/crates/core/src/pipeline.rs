//! Scene alignment: downsample, outlier removal, floor detection, z-up
//! rotation, scale normalization and normals, plus the batch driver that
//! runs it over a directory of PLY files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    aabb_diagonal, align_z_up, detect_dominant_plane_with, estimate_normals, fit_plane_least_squares, scale_align,
    scale_align_about, sor_filter, PointCloud, RansacConfig, RigidSimilarity, ScaleDistribution, Vec3,
};
use crate::ply::{read_ply_file, write_ply_file, PlyFormat};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetScale {
    /// Leave the scale as it is.
    Keep,
    Fixed(f64),
    /// Draw a target diagonal per scene.
    Sampled(ScaleDistribution),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub downsample: Option<usize>,
    pub sor_k: usize,
    pub sor_std_mult: f64,
    pub ransac: RansacConfig,
    pub target_scale: TargetScale,
    /// `None` skips normal estimation.
    pub normals_k: Option<usize>,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            downsample: Some(20_000),
            sor_k: 16,
            sor_std_mult: 2.0,
            ransac: RansacConfig::default(),
            target_scale: TargetScale::Sampled(ScaleDistribution::default()),
            normals_k: Some(16),
            seed: 0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.downsample == Some(0) {
            return Err(invalid("downsample must be positive"));
        }
        if self.sor_k == 0 || !(self.sor_std_mult > 0.0) {
            return Err(invalid(format!("SOR needs k > 0 and a positive multiplier, got {} and {}", self.sor_k, self.sor_std_mult)));
        }
        if self.ransac.iterations == 0 || !(0.0..=1.0).contains(&self.ransac.min_inlier_ratio) {
            return Err(invalid("RANSAC needs iterations > 0 and min_inlier_ratio in [0, 1]"));
        }
        if self.ransac.inlier_threshold.is_some_and(|t| !(t > 0.0)) {
            return Err(invalid("RANSAC inlier threshold must be positive"));
        }
        match self.target_scale {
            TargetScale::Fixed(s) if !(s > 0.0 && s.is_finite()) => Err(invalid(format!("target scale must be positive, got {s}"))),
            _ => Ok(()),
        }
    }
}

/// One row of the alignment report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub name: String,
    pub input_points: usize,
    pub sor_removed: usize,
    pub plane_found: bool,
    pub angle_before_deg: Option<f64>,
    pub angle_after_deg: Option<f64>,
    pub rotation_deg: f64,
    pub alpha: f64,
    pub s_target: Option<f64>,
    pub final_diagonal: f64,
    pub output_points: usize,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub scenes: Vec<SceneReport>,
}

impl PipelineReport {
    pub fn failures(&self) -> usize {
        self.scenes.iter().filter(|s| s.error.is_some()).count()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.scenes {
            w.serialize(s).map_err(|e| invalid(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let scenes = r.deserialize().collect::<std::result::Result<Vec<SceneReport>, _>>().map_err(|e| invalid(e.to_string()))?;
        Ok(Self { scenes })
    }
}

#[derive(Debug, Clone)]
pub struct AlignedScene {
    pub cloud: PointCloud,
    /// Input frame → output frame (after downsampling and filtering).
    pub transform: RigidSimilarity,
    pub report: SceneReport,
}

/// Runs the full alignment on one cloud. A missing floor leaves the
/// orientation unchanged; scaling and normals still apply.
pub fn align_scene(cloud: &PointCloud, config: &AlignConfig, seed: u64) -> Result<AlignedScene> {
    config.validate()?;
    let start = Instant::now();
    let mut report = SceneReport { input_points: cloud.len(), ..Default::default() };
    let (mut c, _) = cloud.compact();
    if c.is_empty() {
        return Err(Error::EmptyCloud("no valid points".into()));
    }
    if let Some(n) = config.downsample {
        if c.len() > n {
            let mut idx = sample(&mut stream(seed, 0x444f_574e), c.len(), n).into_vec();
            idx.sort_unstable();
            c = c.select(&idx);
        }
    }
    let sor = sor_filter(&c, config.sor_k, config.sor_std_mult)?;
    report.sor_removed = sor.removed.len();
    let c = sor.cloud;

    let ransac = RansacConfig { seed: derive_seed(seed, config.ransac.seed), ..config.ransac };
    let plane = detect_dominant_plane_with(&c, &ransac)?;
    let (c, mut transform) = match &plane {
        Some(plane) => {
            report.plane_found = true;
            report.angle_before_deg = Some(plane.angle_to_deg(&Vec3::z()));
            let (aligned, t) = align_z_up(&c, plane)?;
            let near: Vec<&Vec3> = aligned.positions().iter().filter(|p| p.z.abs() <= plane.threshold).collect();
            report.angle_after_deg = fit_plane_least_squares(near).map(|f| {
                let cos = f.normal.z.abs().min(1.0);
                cos.acos().to_degrees()
            });
            report.rotation_deg = t.rotation_angle().to_degrees();
            (aligned, t)
        }
        None => {
            log::warn!("no dominant plane found; orientation left unchanged");
            (c, RigidSimilarity::identity())
        }
    };

    let target = match config.target_scale {
        TargetScale::Keep => None,
        TargetScale::Fixed(s) => Some(s),
        TargetScale::Sampled(dist) => Some(dist.sample(&mut stream(seed, 0x5343_4c45))?),
    };
    let c = match target {
        Some(s) => {
            // scale about the floor footprint so the floor stays at z = 0
            let (scaled, t) = if report.plane_found {
                let centroid = c.centroid().expect("non-empty");
                scale_align_about(&c, s, &Vec3::new(centroid.x, centroid.y, 0.0))?
            } else {
                scale_align(&c, s)?
            };
            report.alpha = t.scale;
            transform = t.after(&transform);
            scaled
        }
        None => {
            report.alpha = 1.0;
            c
        }
    };
    report.s_target = target;
    report.final_diagonal = aabb_diagonal(&c)?;

    let c = match config.normals_k {
        Some(k) if c.valid_count() > k => estimate_normals(&c, k)?.cloud,
        Some(k) => {
            log::warn!("{} points is too few for normals with k = {k}; skipped", c.valid_count());
            c
        }
        None => c,
    };
    report.output_points = c.len();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(AlignedScene { cloud: c, transform, report })
}

/// `*.ply` files of `dir`, sorted by name.
pub fn list_ply_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")))
        .collect();
    files.sort();
    Ok(files)
}

/// Aligns every PLY in `input` and writes the results under the same names
/// in `output`. Failures become report rows with `error` set; rows follow the
/// input order whatever the completion order. `jobs = 0` uses all cores.
pub fn align_directory(input: &Path, output: &Path, config: &AlignConfig, jobs: usize) -> Result<PipelineReport> {
    let files = list_ply_files(input)?;
    std::fs::create_dir_all(output)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| invalid(e.to_string()))?;
    let scenes = pool.install(|| {
        files
            .par_iter()
            .enumerate()
            .map(|(i, path)| {
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let run = || -> Result<SceneReport> {
                    let data = read_ply_file(path)?;
                    let aligned = align_scene(&data.cloud, config, derive_seed(config.seed, i as u64))?;
                    write_ply_file(&output.join(&name), &aligned.cloud, PlyFormat::BinaryLittleEndian)?;
                    Ok(aligned.report)
                };
                match run() {
                    Ok(mut r) => {
                        r.name = name;
                        r
                    }
                    Err(e) => {
                        log::warn!("{name}: {e}");
                        SceneReport { name, error: Some(e.to_string()), ..Default::default() }
                    }
                }
            })
            .collect()
    });
    Ok(PipelineReport { scenes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let report = PipelineReport {
            scenes: vec![
                SceneReport { name: "a.ply".into(), input_points: 10, plane_found: true, angle_before_deg: Some(3.5), alpha: 0.5, ..Default::default() },
                SceneReport { name: "b.ply".into(), error: Some("bad, file".into()), ..Default::default() },
            ],
        };
        let back = PipelineReport::from_csv(&report.to_csv().unwrap()).unwrap();
        assert_eq!(back, report);
        let json: PipelineReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
        assert_eq!(json, report);
    }
}
