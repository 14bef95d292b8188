//! Teacher-student training on point clouds.
//!
//! One step: build views for every scene of the batch; the EMA teacher
//! encodes the full global views, and all their logits are pooled into one
//! Sinkhorn problem; the student encodes the masked global views, the local
//! views, the unmasked first global view (for the Laplacian term) and is
//! compared with the teacher on a noise-augmented copy (for the consistency
//! term). Gradients flow through the student only; AdamW updates it and the
//! teacher follows by EMA.
//!
//! Scene-level work runs in parallel, but every reduction happens in batch
//! order, so a run is bit-reproducible for a given seed regardless of the
//! thread count.

mod config;
mod metrics;

use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::index::sample;
use rayon::prelude::*;

pub use config::TrainConfig;
pub use metrics::{prototype_usage_entropy, MetricsRecord, UsageAccumulator};

use crate::error::{Error, Result};
use crate::geometry::{build_knn_graph, estimate_normals, PointCloud, Vec3};
use crate::losses::{
    clustering_ce, consistency_loss, laplacian_loss, match_correspondences, total_loss, CorrespondenceSet,
    EmbeddingBatch, GradKey, GradSpace, GradientSet, LaplacianForm, LossBreakdown, LossConfig, LossParts, LossTerm,
    ViewSlot,
};
use crate::model::{
    ema_update, encode_with_mask, AdamW, EncoderCache, ModelParams, PrototypeHead, TeacherState,
};
use crate::rng::{derive_seed, stream};
use crate::schedule::{Schedule, WarmupCosine};
use crate::sinkhorn::{sinkhorn_normalize, softmax_rows, AssignmentMatrix, LogitsBatch};
use crate::views::{add_noise, make_views, NoisyView, View, ViewSet};

const INIT_STREAM: u64 = 0x494e_4954;
const BATCH_STREAM: u64 = 0x4241_5443;
const DOWNSAMPLE_STREAM: u64 = 0x444f_574e;
const NOISE_TAG: u64 = 0x4e4f_4953;

/// Compacts `cloud`, downsamples it to at most `points` points and estimates
/// normals when it has none.
pub fn prepare_scene(cloud: &PointCloud, points: usize, normals_k: usize, seed: u64) -> Result<PointCloud> {
    let (mut c, _) = cloud.compact();
    if c.len() > points {
        let mut idx = sample(&mut stream(seed, DOWNSAMPLE_STREAM), c.len(), points).into_vec();
        idx.sort_unstable();
        c = c.select(&idx);
    }
    if c.normals().is_none() {
        c = estimate_normals(&c, normals_k)?.cloud;
    }
    if c.colors().is_none() {
        log::warn!("scene without colors; color features are zero");
    }
    Ok(c)
}

/// Mean pairwise Laplacian energy of the student embeddings over `scenes`
/// (already prepared), on each scene's own kNN graph.
pub fn laplacian_energy(params: &ModelParams, scenes: &[PointCloud], config: &TrainConfig) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::EmptyCloud("no evaluation scenes".into()));
    }
    let loss_config = LossConfig { laplacian_form: LaplacianForm::Pairwise, ..config.loss };
    let values = scenes
        .par_iter()
        .map(|scene| {
            let (emb, _) = encode_with_mask(&params.encoder, scene, None)?;
            let graph = build_knn_graph(scene, config.knn_k, config.max_radius, config.sigma)?;
            Ok(laplacian_loss(&emb, &graph, &loss_config)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainState {
    /// Number of completed steps.
    pub step: usize,
    pub student: ModelParams,
    pub teacher: TeacherState,
    pub optimizer: AdamW,
}

/// Per-component parameter gradients, exposed for inspection.
#[derive(Debug, Clone)]
pub struct ComponentGradients {
    pub unmask: ModelParams,
    pub mask: ModelParams,
    pub roll: ModelParams,
    pub laplacian: ModelParams,
    pub consistency: ModelParams,
}

#[derive(Debug, Clone)]
pub struct StepGradients {
    pub batch: Vec<usize>,
    pub breakdown: LossBreakdown,
    pub params: ModelParams,
    pub components: Option<ComponentGradients>,
    pub usage_entropy: f64,
    pub teacher_temperature: f64,
}

struct TeacherPass {
    scene: usize,
    views: ViewSet,
    noisy: NoisyView,
    logits: Vec<Array2<f64>>,
    noisy_embeddings: EmbeddingBatch,
}

struct StudentPass {
    parts: LossParts,
    caches: Vec<(ViewSlot, EncoderCache)>,
}

pub struct Trainer {
    config: TrainConfig,
    scenes: Vec<PointCloud>,
    state: TrainState,
    teacher_temperature: Schedule,
    lambda: Schedule,
    momentum: Schedule,
    weight_decay: Schedule,
    learning_rate: WarmupCosine,
}

impl Trainer {
    /// Prepares `scenes` and initializes student and teacher from the seed.
    pub fn new(config: TrainConfig, scenes: &[PointCloud]) -> Result<Self> {
        config.validate()?;
        if scenes.is_empty() {
            return Err(Error::EmptyCloud("training needs at least one scene".into()));
        }
        let prepared = scenes
            .par_iter()
            .enumerate()
            .map(|(i, c)| prepare_scene(c, config.scene_points, config.normals_k, derive_seed(config.seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let student = ModelParams::init(&config.model, &mut stream(config.seed, INIT_STREAM))?;
        let steps = config.steps;
        let state = TrainState {
            step: 0,
            teacher: TeacherState::from_student(&student, config.ema_momentum.start),
            optimizer: AdamW::new(&student),
            student,
        };
        Ok(Self {
            teacher_temperature: config.teacher_temperature.over(steps),
            lambda: config.lambda.over(steps),
            momentum: config.ema_momentum.over(steps),
            weight_decay: config.weight_decay.over(steps),
            learning_rate: WarmupCosine::new(config.learning_rate, config.final_learning_rate, config.warmup_fraction, steps),
            config,
            scenes: prepared,
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    /// The prepared training scenes.
    pub fn scenes(&self) -> &[PointCloud] {
        &self.scenes
    }

    pub fn is_finished(&self) -> bool {
        self.state.step >= self.config.steps
    }

    /// Scene indices used at `step`.
    pub fn batch_indices(&self, step: usize) -> Vec<usize> {
        let n = self.scenes.len();
        if n <= self.config.batch_size {
            return (0..n).collect();
        }
        let mut rng = stream(derive_seed(self.config.seed, BATCH_STREAM), step as u64);
        let mut idx = sample(&mut rng, n, self.config.batch_size).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Losses and student gradients at `step` for the current parameters.
    /// Nothing is updated.
    pub fn gradients(&self, step: usize, with_components: bool) -> Result<StepGradients> {
        let batch = self.batch_indices(step);
        let tau_t = self.teacher_temperature.value(step);
        let step_seed = derive_seed(self.config.seed, step as u64 + 1);

        let teacher: Vec<TeacherPass> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &scene)| self.teacher_pass(scene, derive_seed(step_seed, slot as u64)))
            .collect::<Result<_>>()?;

        let rows: Vec<usize> = teacher.iter().flat_map(|t| t.logits.iter().map(|l| l.nrows())).collect();
        let k = self.state.student.head.num_prototypes();
        let mut pooled = Array2::zeros((rows.iter().sum(), k));
        let mut offset = 0;
        for l in teacher.iter().flat_map(|t| &t.logits) {
            pooled.slice_mut(s![offset..offset + l.nrows(), ..]).assign(l);
            offset += l.nrows();
        }
        let pooled = LogitsBatch::new(pooled, tau_t)?;
        let q = sinkhorn_normalize(&pooled, self.config.sinkhorn_iterations)?;
        let usage_entropy = prototype_usage_entropy(softmax_rows(&pooled)?.values())?;

        let mut targets: Vec<Vec<AssignmentMatrix>> = Vec::with_capacity(teacher.len());
        let mut offset = 0;
        for t in &teacher {
            let mut per_view = Vec::new();
            for l in &t.logits {
                let range: Vec<usize> = (offset..offset + l.nrows()).collect();
                per_view.push(q.select_rows(&range));
                offset += l.nrows();
            }
            targets.push(per_view);
        }

        let students: Vec<StudentPass> = teacher
            .par_iter()
            .zip(&targets)
            .enumerate()
            .map(|(slot, (t, q))| self.student_pass(slot, t, q))
            .collect::<Result<_>>()?;

        let scale = 1.0 / students.len() as f64;
        let mut parts = LossParts::default();
        for sp in &students {
            let pairs = [
                (&mut parts.unmask, &sp.parts.unmask),
                (&mut parts.mask, &sp.parts.mask),
                (&mut parts.roll, &sp.parts.roll),
                (&mut parts.laplacian, &sp.parts.laplacian),
                (&mut parts.consistency, &sp.parts.consistency),
            ];
            for (dst, src) in pairs {
                dst.value += scale * src.value;
                dst.grads.add_scaled(&src.grads, scale)?;
            }
        }
        let breakdown = total_loss(&parts, &self.config.loss, step, &self.lambda)?;
        let values = [breakdown.total, breakdown.unmask, breakdown.mask, breakdown.roll, breakdown.laplacian, breakdown.consistency];
        if values.iter().any(|v| !v.is_finite()) {
            let dump = format!(
                "step {step}: non-finite loss (total {}, unmask {}, mask {}, roll {}, laplacian {}, consistency {}); \
                 batch scenes {batch:?}, teacher temperature {tau_t}, student parameters finite: {}",
                breakdown.total,
                breakdown.unmask,
                breakdown.mask,
                breakdown.roll,
                breakdown.laplacian,
                breakdown.consistency,
                self.state.student.is_finite()
            );
            log::error!("{dump}");
            return Err(Error::NonFinite(dump));
        }

        let params = self.backprop(&breakdown.gradient, &students)?;
        let components = if with_components {
            Some(ComponentGradients {
                unmask: self.backprop(&parts.unmask.grads, &students)?,
                mask: self.backprop(&parts.mask.grads, &students)?,
                roll: self.backprop(&parts.roll.grads, &students)?,
                laplacian: self.backprop(&parts.laplacian.grads, &students)?,
                consistency: self.backprop(&parts.consistency.grads, &students)?,
            })
        } else {
            None
        };
        Ok(StepGradients { batch, breakdown, params, components, usage_entropy, teacher_temperature: tau_t })
    }

    /// One optimization step followed by the EMA update.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let start = Instant::now();
        let step = self.state.step;
        let g = self.gradients(step, false)?;
        if !g.params.is_finite() {
            let dump = format!("step {step}: non-finite gradient; batch scenes {:?}", g.batch);
            log::error!("{dump}");
            return Err(Error::NonFinite(dump));
        }
        let lr = self.learning_rate.value(step);
        let wd = self.weight_decay.value(step);
        let m = self.momentum.value(step);
        self.state.optimizer.step(&mut self.state.student, &g.params, lr, wd)?;
        self.state.teacher = ema_update(&self.state.teacher, &self.state.student, m)?;
        self.state.step += 1;
        let b = &g.breakdown;
        Ok(MetricsRecord {
            step,
            total: b.total,
            unmask: b.unmask,
            mask: b.mask,
            roll: b.roll,
            laplacian: b.laplacian,
            consistency: b.consistency,
            lambda: b.lambda,
            mu: b.mu,
            teacher_temperature: g.teacher_temperature,
            learning_rate: lr,
            weight_decay: wd,
            ema_momentum: m,
            usage_entropy: g.usage_entropy,
            grad_norm: g.params.norm(),
            wall_time_s: self.config.log_wall_time.then(|| start.elapsed().as_secs_f64()),
        })
    }

    /// Runs the remaining steps, handing every record to `sink`.
    pub fn run<F: FnMut(&MetricsRecord) -> Result<()>>(&mut self, mut sink: F) -> Result<()> {
        while !self.is_finished() {
            let record = self.step()?;
            sink(&record)?;
        }
        Ok(())
    }

    fn teacher_pass(&self, scene: usize, seed: u64) -> Result<TeacherPass> {
        let cloud = &self.scenes[scene];
        let teacher = &self.state.teacher.params;
        let views = make_views(cloud, seed, &self.config.views)?;
        let logits = views
            .global_views
            .iter()
            .map(|v| {
                let (emb, _) = encode_with_mask(&teacher.encoder, &v.cloud, None)?;
                teacher.head.logits(emb.values())
            })
            .collect::<Result<Vec<_>>>()?;
        let vc = &self.config.views;
        let noisy = add_noise(&views.global_views[0].cloud, vc.noise_sigma, vc.noise_dropout, derive_seed(seed, NOISE_TAG))?;
        let (noisy_embeddings, _) = encode_with_mask(&teacher.encoder, &noisy.cloud, None)?;
        Ok(TeacherPass { scene, views, noisy, logits, noisy_embeddings })
    }

    fn student_pass(&self, slot: usize, teacher: &TeacherPass, q: &[AssignmentMatrix]) -> Result<StudentPass> {
        let scene = &self.scenes[teacher.scene];
        let student = &self.state.student;
        let cutoff = self.config.correspondence_cutoff;
        let tau_s = self.config.student_temperature;
        let original = |v: &View| -> Vec<Vec3> { v.source_indices.iter().map(|&i| scene.positions()[i]).collect() };
        let key = |view, space| GradKey { scene: slot, view, space };
        let globals = &teacher.views.global_views;
        let global_orig: Vec<Vec<Vec3>> = globals.iter().map(original).collect();

        let mut caches = Vec::new();
        let mut mask_items = Vec::new();
        let mut roll_items = Vec::new();
        let mut unmask_items = Vec::new();
        let mut masked_first = None;

        for (v, view) in globals.iter().enumerate() {
            let slot_v = ViewSlot::MaskedGlobal(v as u8);
            let (emb, cache) = encode_with_mask(&student.encoder, &view.cloud, Some(&teacher.views.masks[v]))?;
            let logits = LogitsBatch::new(student.head.logits(emb.values())?, tau_s)?;
            let (value, grad) = clustering_ce(&q[v], &logits)?;
            mask_items.push((key(slot_v, GradSpace::Logits), value, grad));
            let other = 1 - v;
            let pairs = match_correspondences(&global_orig[other], &global_orig[v], cutoff);
            if let Some((value, grad)) = ce_on_pairs(&q[other], &logits, &pairs)? {
                roll_items.push((key(slot_v, GradSpace::Logits), value, grad));
            }
            if v == 0 {
                masked_first = Some(emb);
            }
            caches.push((slot_v, cache));
        }

        for (j, view) in teacher.views.local_views.iter().enumerate() {
            let slot_l = ViewSlot::Local(j as u8);
            let (emb, cache) = encode_with_mask(&student.encoder, &view.cloud, None)?;
            let logits = LogitsBatch::new(student.head.logits(emb.values())?, tau_s)?;
            let local_orig = original(view);
            for (v, g) in global_orig.iter().enumerate() {
                let pairs = match_correspondences(g, &local_orig, cutoff);
                if let Some((value, grad)) = ce_on_pairs(&q[v], &logits, &pairs)? {
                    unmask_items.push((key(slot_l, GradSpace::Logits), value, grad));
                }
            }
            caches.push((slot_l, cache));
        }

        let mut parts = LossParts {
            unmask: average(unmask_items)?,
            mask: average(mask_items)?,
            roll: average(roll_items)?,
            ..Default::default()
        };

        let first = &globals[0];
        let (emb, cache) = encode_with_mask(&student.encoder, &first.cloud, None)?;
        match build_knn_graph(&first.cloud, self.config.knn_k, self.config.max_radius, self.config.sigma) {
            Ok(graph) => {
                let out = laplacian_loss(&emb, &graph, &self.config.loss)?;
                parts.laplacian = LossTerm {
                    value: out.value,
                    grads: GradientSet::single(key(ViewSlot::UnmaskedGlobal(0), GradSpace::Embeddings), out.grad),
                };
            }
            Err(Error::EmptyCloud(msg) | Error::DegenerateGeometry(msg)) => {
                log::debug!("scene {}: no Laplacian graph ({msg})", teacher.scene);
            }
            Err(e) => return Err(e),
        }
        caches.push((ViewSlot::UnmaskedGlobal(0), cache));

        let teacher_orig: Vec<Vec3> = teacher.noisy.kept.iter().map(|&k| scene.positions()[first.source_indices[k]]).collect();
        let pairs = match_correspondences(&teacher_orig, &global_orig[0], cutoff);
        let masked_first = masked_first.expect("two global views");
        let out = consistency_loss(&teacher.noisy_embeddings, &masked_first, &pairs)?;
        parts.consistency = LossTerm {
            value: out.value,
            grads: GradientSet::single(key(ViewSlot::MaskedGlobal(0), GradSpace::Embeddings), out.grad),
        };

        Ok(StudentPass { parts, caches })
    }

    /// Parameter gradients of the student for the view-level gradients in
    /// `grads`.
    fn backprop(&self, grads: &GradientSet, students: &[StudentPass]) -> Result<ModelParams> {
        let student = &self.state.student;
        let per_scene = students
            .par_iter()
            .enumerate()
            .map(|(slot, sp)| {
                let mut acc = student.zeros_like();
                for (view, cache) in &sp.caches {
                    let dlog = grads.get(&GradKey { scene: slot, view: *view, space: GradSpace::Logits });
                    let demb = grads.get(&GradKey { scene: slot, view: *view, space: GradSpace::Embeddings });
                    if dlog.is_none() && demb.is_none() {
                        continue;
                    }
                    let mut d_embeddings = demb.cloned().unwrap_or_else(|| Array2::zeros(cache.output().raw_dim()));
                    let mut d_projection = Array2::zeros(student.head.projection().raw_dim());
                    if let Some(dlog) = dlog {
                        let (de, dp) = student.head.backward(cache.output(), dlog);
                        d_embeddings += &de;
                        d_projection = dp;
                    }
                    let encoder = student.encoder.backward(cache, &d_embeddings)?;
                    acc.add_scaled(&ModelParams { encoder, head: PrototypeHead::from_raw(d_projection) }, 1.0)?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = student.zeros_like();
        for g in &per_scene {
            total.add_scaled(g, 1.0)?;
        }
        Ok(total)
    }
}

/// Cross-entropy between teacher targets and student logits restricted to
/// matched pairs; the gradient is scattered back to every student row.
fn ce_on_pairs(q: &AssignmentMatrix, logits: &LogitsBatch, pairs: &CorrespondenceSet) -> Result<Option<(f64, Array2<f64>)>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let students = pairs.student_indices();
    let (value, sub) = clustering_ce(&q.select_rows(&pairs.teacher_indices()), &logits.select_rows(&students))?;
    let mut grad = Array2::zeros(logits.values().raw_dim());
    for (r, &i) in students.iter().enumerate() {
        grad.row_mut(i).assign(&sub.row(r));
    }
    Ok(Some((value, grad)))
}

/// Mean of the items' values with gradients scaled alike.
fn average(items: Vec<(GradKey, f64, Array2<f64>)>) -> Result<LossTerm> {
    let mut term = LossTerm::default();
    if items.is_empty() {
        return Ok(term);
    }
    let w = 1.0 / items.len() as f64;
    for (key, value, grad) in items {
        term.value += w * value;
        term.grads.accumulate(key, &grad, w)?;
    }
    Ok(term)
}
