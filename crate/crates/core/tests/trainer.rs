use lam3c::schedule::Ramp;
use lam3c::synth::{generate_room, SceneSpec};
use lam3c::trainer::{TrainConfig, Trainer};
use lam3c::PointCloud;

fn scenes(n: usize) -> Vec<PointCloud> {
    (0..n)
        .map(|i| {
            let spec = SceneSpec { scale: 0.25, downsample: Some(4000), seed: 100 + i as u64, ..Default::default() };
            generate_room(&spec).unwrap().0
        })
        .collect()
}

fn small_config(steps: usize) -> TrainConfig {
    TrainConfig { steps, batch_size: 2, seed: 7, scene_points: 1024, ..Default::default() }
}

#[test]
fn runs_are_reproducible() {
    let data = scenes(3);
    let run = || {
        let mut t = Trainer::new(small_config(4), &data).unwrap();
        let mut lines = Vec::new();
        t.run(|r| {
            lines.push(r.to_json_line()?);
            Ok(())
        })
        .unwrap();
        (lines, t.state().student.checksum())
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_eq!(a.len(), 4);
}

#[test]
fn total_gradient_is_weighted_sum_of_components() {
    let data = scenes(2);
    let t = Trainer::new(small_config(10), &data).unwrap();
    let g = t.gradients(3, true).unwrap();
    let c = g.components.unwrap();
    let b = &g.breakdown;
    let cfg = t.config();
    let mut sum = g.params.zeros_like();
    for (part, w) in [
        (&c.unmask, cfg.loss.w_unmask),
        (&c.mask, cfg.loss.w_mask),
        (&c.roll, cfg.loss.w_roll),
        (&c.laplacian, b.lambda),
        (&c.consistency, b.mu),
    ] {
        sum.add_scaled(part, w).unwrap();
    }
    assert!(sum.max_abs_diff(&g.params) < 1e-8, "{}", sum.max_abs_diff(&g.params));
    assert!(b.laplacian > 0.0 && b.consistency > 0.0);
    let expected = cfg.loss.w_unmask * b.unmask + cfg.loss.w_mask * b.mask + cfg.loss.w_roll * b.roll
        + b.lambda * b.laplacian
        + b.mu * b.consistency;
    assert!((b.total - expected).abs() < 1e-12);
}

#[test]
fn disabling_regularizers_leaves_clustering_terms_unchanged() {
    let data = scenes(2);
    let with = Trainer::new(small_config(10), &data).unwrap();
    let without = Trainer::new(small_config(10).without_regularizers(), &data).unwrap();
    let a = with.gradients(0, false).unwrap().breakdown;
    let b = without.gradients(0, false).unwrap().breakdown;
    assert_eq!(a.unmask.to_bits(), b.unmask.to_bits());
    assert_eq!(a.mask.to_bits(), b.mask.to_bits());
    assert_eq!(a.roll.to_bits(), b.roll.to_bits());
    assert_eq!(b.total, b.clustering(&without.config().loss));
}

#[test]
fn teacher_changes_only_through_ema() {
    let data = scenes(2);
    let mut t = Trainer::new(small_config(3), &data).unwrap();
    let before = t.state().teacher.params.checksum();
    t.gradients(0, true).unwrap();
    assert_eq!(t.state().teacher.params.checksum(), before);
    t.step().unwrap();
    assert_ne!(t.state().teacher.params.checksum(), before);
}

#[test]
fn loss_drops_on_a_repeated_scene() {
    let data = scenes(1);
    let mut cfg = small_config(50).without_regularizers();
    cfg.batch_size = 1;
    cfg.teacher_temperature = Ramp::constant(0.04);
    let mut t = Trainer::new(cfg, &data).unwrap();
    let mut totals = Vec::new();
    t.run(|r| {
        totals.push(r.total);
        Ok(())
    })
    .unwrap();
    let head: f64 = totals[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = totals[45..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "first steps {head}, last steps {tail}");
}
