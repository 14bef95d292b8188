use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use lam3c::geometry::{
    align_z_up, build_knn_graph, detect_dominant_plane, estimate_normals, sor_filter, PointCloud, SigmaMode, Vec3,
};
use lam3c::pipeline::{align_scene, AlignConfig, TargetScale};
use lam3c::synth::{generate_room, Part, SceneSpec};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn far_outliers_leave_the_cube() {
    let mut r = rng(1);
    let mut pts: Vec<Vec3> = (0..1000).map(|_| Vec3::new(r.random(), r.random(), r.random())).collect();
    let diag = 3f64.sqrt();
    for _ in 0..10 {
        let dir = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)).normalize();
        pts.push(Vec3::repeat(0.5) + dir * 10.0 * diag);
    }
    let result = sor_filter(&PointCloud::new(pts.clone()).unwrap(), 16, 2.0).unwrap();
    assert!((1000..1010).all(|i| result.removed.contains(&i)));
    assert!(result.removed.iter().filter(|&&i| i < 1000).count() <= 10);

    // independent brute force of the same rule
    let means: Vec<f64> = pts
        .iter()
        .map(|p| {
            let mut d: Vec<f64> = pts.iter().map(|q| (p - q).norm()).collect();
            d.sort_by(f64::total_cmp);
            d[1..=16].iter().sum::<f64>() / 16.0
        })
        .collect();
    let mu = means.iter().sum::<f64>() / means.len() as f64;
    let sd = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / means.len() as f64).sqrt();
    let oracle: Vec<usize> = (0..pts.len()).filter(|&i| means[i] > mu + 2.0 * sd).collect();
    assert_eq!(oracle, result.removed);
}

#[test]
fn noisy_plane_among_clutter() {
    let mut r = rng(2);
    let noise = Normal::new(0.0, 0.005).unwrap();
    let mut pts: Vec<Vec3> = (0..2000).map(|_| Vec3::new(r.random(), r.random(), 0.3 + noise.sample(&mut r))).collect();
    pts.extend((0..200).map(|_| Vec3::new(r.random(), r.random(), r.random())));
    let plane = detect_dominant_plane(&PointCloud::new(pts).unwrap(), 256, 0.02, 7).unwrap().expect("plane");
    assert!(plane.normal.z.abs().acos().to_degrees() < 1.0);
    assert!((plane.offset.abs() - 0.3).abs() < 0.01);
}

#[test]
fn ball_has_no_dominant_plane() {
    let mut r = rng(3);
    let mut pts = Vec::new();
    while pts.len() < 3000 {
        let p = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        if p.norm() <= 1.0 {
            pts.push(p);
        }
    }
    assert!(detect_dominant_plane(&PointCloud::new(pts).unwrap(), 256, 0.02, 1).unwrap().is_none());
}

#[test]
fn seven_degree_tilt_is_undone() {
    let spec = SceneSpec { tilt: [7f64.to_radians(), 0.0, 0.0], seed: 11, ..Default::default() };
    let (cloud, truth) = generate_room(&spec).unwrap();
    let plane = detect_dominant_plane(&cloud, 512, 0.03, 5).unwrap().expect("floor");
    let (aligned, t) = align_z_up(&cloud, &plane).unwrap();
    let up = t.rotation.transpose() * Vec3::z();
    assert!(up.angle(&truth.up_axis).to_degrees() < 1.0);
    let floor: Vec<f64> = aligned.positions().iter().zip(&truth.parts).filter(|(_, p)| **p == Part::Floor).map(|(q, _)| q.z).collect();
    let mean = floor.iter().sum::<f64>() / floor.len() as f64;
    assert!(mean.abs() < 0.01, "floor at z = {mean}");
}

#[test]
fn untilted_floor_within_half_a_degree() {
    for seed in 0..5 {
        let (cloud, _) = generate_room(&SceneSpec { seed, ..Default::default() }).unwrap();
        let plane = detect_dominant_plane(&cloud, 512, 0.03, seed).unwrap().expect("floor");
        assert!(plane.normal.angle(&Vec3::z()).to_degrees() < 0.5);
    }
}

#[test]
fn pipeline_puts_floor_at_zero_and_hits_target() {
    let tilt = Rotation3::from_axis_angle(&Vec3::y_axis(), 0.2).scaled_axis();
    let spec = SceneSpec { tilt: [tilt.x, tilt.y, tilt.z], ghost_fraction: 0.2, outlier_count: 100, seed: 3, ..Default::default() };
    let (cloud, truth) = generate_room(&spec).unwrap();
    let config = AlignConfig { target_scale: TargetScale::Fixed(7.5), downsample: None, ..Default::default() };
    let out = align_scene(&cloud, &config, 9).unwrap();
    assert!((out.report.final_diagonal - 7.5).abs() <= 1e-6);
    assert!(out.report.angle_after_deg.unwrap() < 0.5);

    // floor points pushed through the reported transform
    let floor: Vec<f64> = cloud.positions().iter().zip(&truth.parts).filter(|(_, p)| **p == Part::Floor).map(|(q, _)| out.transform.apply(q).z).collect();
    let mean = floor.iter().sum::<f64>() / floor.len() as f64;
    assert!(mean.abs() < 0.01, "floor at z = {mean}");
    assert!(out.cloud.normals().is_some());
}

#[test]
fn aligned_scene_is_a_fixed_point() {
    let (cloud, _) = generate_room(&SceneSpec { seed: 4, ..Default::default() }).unwrap();
    let config = AlignConfig { target_scale: TargetScale::Keep, downsample: None, normals_k: None, ..Default::default() };
    let first = align_scene(&cloud, &config, 1).unwrap();
    let current = first.report.final_diagonal;
    let config = AlignConfig { target_scale: TargetScale::Fixed(current), ..config };
    let again = align_scene(&first.cloud, &config, 2).unwrap();
    assert!(again.report.rotation_deg < 0.5);
    assert!(again.report.angle_before_deg.unwrap() < 0.5);
    assert!((again.report.alpha - 1.0).abs() < 0.01);
}

#[test]
fn plane_normals_point_up() {
    let mut r = rng(5);
    let pts: Vec<Vec3> = (0..1500).map(|_| Vec3::new(r.random(), r.random(), 0.0)).collect();
    let est = estimate_normals(&PointCloud::new(pts).unwrap(), 16).unwrap();
    for n in est.cloud.normals().unwrap() {
        assert!(n.angle(&Vec3::z()).to_degrees() < 1.0);
    }
}

#[test]
fn sphere_normals_are_radial() {
    let mut r = rng(6);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let pts: Vec<Vec3> = (0..4000).map(|_| Vec3::new(normal.sample(&mut r), normal.sample(&mut r), normal.sample(&mut r)).normalize()).collect();
    let est = estimate_normals(&PointCloud::new(pts.clone()).unwrap(), 16).unwrap();
    for (p, n) in pts.iter().zip(est.cloud.normals().unwrap()) {
        // orientation is a convention, only the line matters
        let angle = n.angle(p).to_degrees();
        assert!(angle.min(180.0 - angle) < 5.0, "{angle}");
    }
}

#[test]
fn grid_spacing_is_the_adaptive_sigma() {
    let h = 0.07;
    let pts: Vec<Vec3> = (0..6).flat_map(|i| (0..6).map(move |j| Vec3::new(i as f64 * h, j as f64 * h, 0.0))).collect();
    let graph = build_knn_graph(&PointCloud::new(pts).unwrap(), 1, 1.0, SigmaMode::Adaptive).unwrap();
    assert!((graph.sigma - h).abs() < 1e-12);
}

#[test]
fn generated_rooms_are_reproducible() {
    let spec = SceneSpec { ghost_fraction: 0.2, outlier_count: 50, hole_count: 2, tilt: [0.1, 0.05, 0.0], seed: 8, ..Default::default() };
    assert_eq!(generate_room(&spec).unwrap(), generate_room(&spec).unwrap());
}
