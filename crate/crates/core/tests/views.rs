use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lam3c::geometry::{PointCloud, Vec3};
use lam3c::synth::{generate_room, SceneSpec};
use lam3c::views::{add_noise, grid_mask, make_views, ViewConfig};

fn scene(seed: u64) -> PointCloud {
    generate_room(&SceneSpec { downsample: Some(10_000), seed, ..Default::default() }).unwrap().0
}

#[test]
fn views_are_deterministic_per_seed() {
    let s = scene(1);
    let config = ViewConfig::default();
    assert_eq!(make_views(&s, 4, &config).unwrap(), make_views(&s, 4, &config).unwrap());
    assert_ne!(make_views(&s, 4, &config).unwrap(), make_views(&s, 5, &config).unwrap());
}

#[test]
fn global_views_overlap() {
    let config = ViewConfig::default();
    for seed in 0..10 {
        let s = scene(100 + seed);
        let views = make_views(&s, seed, &config).unwrap();
        let a: BTreeSet<usize> = views.global_views[0].source_indices.iter().copied().collect();
        let b: BTreeSet<usize> = views.global_views[1].source_indices.iter().copied().collect();
        let shared = a.intersection(&b).count() as f64;
        assert!(shared / a.len().min(b.len()) as f64 >= 0.05, "seed {seed}: {shared}");
    }
}

#[test]
fn recovered_positions_match_the_scene() {
    let s = scene(2);
    let views = make_views(&s, 3, &ViewConfig::default()).unwrap();
    for v in views.global_views.iter().chain(&views.local_views) {
        for (p, &i) in v.recovered_positions().iter().zip(&v.source_indices) {
            assert!((p - s.positions()[i]).norm() < 1e-9);
        }
    }
}

#[test]
fn mask_covers_whole_voxels() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let pts: Vec<Vec3> = (0..1000).map(|_| Vec3::new(r.random(), r.random(), r.random::<f64>() * 0.5)).collect();
    let cloud = PointCloud::new(pts.clone()).unwrap();
    let mask = grid_mask(&cloud, 0.1, 0.3, 12).unwrap();

    let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        cells.entry(((p.x / 0.1).floor() as i64, (p.y / 0.1).floor() as i64, (p.z / 0.1).floor() as i64)).or_default().push(i);
    }
    for members in cells.values() {
        assert!(members.iter().all(|&i| mask[i] == mask[members[0]]));
    }
    let largest = cells.values().map(Vec::len).max().unwrap() as f64 / 1000.0;
    let fraction = mask.iter().filter(|m| **m).count() as f64 / 1000.0;
    assert!(fraction >= 0.3 && fraction <= 0.3 + largest, "{fraction}");
}

#[test]
fn noise_has_the_requested_variance() {
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let pts: Vec<Vec3> = (0..10_000).map(|_| Vec3::new(r.random(), r.random(), r.random())).collect();
    let cloud = PointCloud::new(pts.clone()).unwrap();
    let noisy = add_noise(&cloud, 0.01, 0.0, 3).unwrap();
    assert_eq!(noisy.kept.len(), pts.len());
    for axis in 0..3 {
        let d: Vec<f64> = noisy.cloud.positions().iter().zip(&pts).map(|(a, b)| a[axis] - b[axis]).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        assert!((var / 1e-4 - 1.0).abs() < 0.2, "axis {axis}: {var}");
    }
    let dropped = add_noise(&cloud, 0.01, 0.1, 3).unwrap();
    let kept = dropped.kept.len() as f64 / pts.len() as f64;
    assert!((kept - 0.9).abs() < 0.02);
}
