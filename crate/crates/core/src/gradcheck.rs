//! Central finite-difference checks of every analytic gradient.
//!
//! The error of one instance is `‖analytic − numeric‖ / max(‖analytic‖,
//! ‖numeric‖, 1e-12)`; a suite reports the worst instance.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{build_knn_graph, KnnGraph, PointCloud, SigmaMode, Vec3};
use crate::losses::{clustering_ce, consistency_loss, laplacian_loss, CorrespondenceSet, EmbeddingBatch, LaplacianForm, LossConfig};
use crate::model::{encode_with_mask, ModelConfig, ModelParams, INPUT_DIM};
use crate::rng::{stream, Rng};
use crate::sinkhorn::{sinkhorn_normalize, LogitsBatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { instances: 100, step: 1e-5, tolerance: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

pub const SUITES: [&str; 5] = ["clustering_ce", "laplacian_pairwise", "laplacian_huber_residual", "consistency", "encoder"];

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-12)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient<F: Fn(&Array2<f64>) -> Result<f64>>(f: F, x: &Array2<f64>, h: f64) -> Result<Array2<f64>> {
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[i, j]];
        probe[[i, j]] = orig + h;
        let up = f(&probe)?;
        probe[[i, j]] = orig - h;
        let down = f(&probe)?;
        probe[[i, j]] = orig;
        grad[[i, j]] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

fn random_graph(rng: &mut Rng, n: usize) -> Result<(Vec<Vec3>, KnnGraph)> {
    loop {
        let positions: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let k = rng.random_range(1..=(n - 1).min(8));
        let radius = rng.random_range(0.3..1.0);
        let sigma = if rng.random_bool(0.5) { SigmaMode::Adaptive } else { SigmaMode::Fixed(rng.random_range(0.1..0.5)) };
        let cloud = PointCloud::new(positions.clone())?;
        match build_knn_graph(&cloud, k, radius, sigma) {
            Ok(g) if !g.is_empty() => return Ok((positions, g)),
            _ => continue,
        }
    }
}

/// Residual norms of the Huber form, used to keep instances off the kink.
fn huber_residuals(z: &Array2<f64>, graph: &KnnGraph) -> Vec<f64> {
    (0..graph.num_nodes())
        .filter(|&i| !graph.edge_range(i).is_empty())
        .map(|i| {
            let mut mean = Array1::zeros(z.ncols());
            let mut wsum = 0.0;
            for e in graph.edge_range(i) {
                let w = graph.weights()[e];
                mean.scaled_add(w, &z.row(graph.edges()[e].target));
                wsum += w;
            }
            let r = &z.row(i) - &(mean / wsum);
            r.dot(&r).sqrt()
        })
        .collect()
}

fn clustering_instance(rng: &mut Rng, h: f64) -> Result<f64> {
    let (b, k) = (rng.random_range(1..=32), rng.random_range(2..=16));
    let tau = rng.random_range(0.05..1.0);
    let q = sinkhorn_normalize(&LogitsBatch::new(random_matrix(rng, b, k, 3.0), rng.random_range(0.1..1.0))?, 3)?;
    let x = random_matrix(rng, b, k, 2.0);
    let (_, analytic) = clustering_ce(&q, &LogitsBatch::new(x.clone(), tau)?)?;
    let numeric = numeric_gradient(|v| Ok(clustering_ce(&q, &LogitsBatch::new(v.clone(), tau)?)?.0), &x, h)?;
    Ok(relative_error(analytic.as_slice().unwrap(), numeric.as_slice().unwrap()))
}

fn laplacian_instance(rng: &mut Rng, h: f64, form: LaplacianForm) -> Result<f64> {
    let n = rng.random_range(3..=32);
    let d = rng.random_range(1..=16);
    let (positions, graph) = random_graph(rng, n)?;
    let config = LossConfig { laplacian_form: form, huber_delta: rng.random_range(0.05..1.0), ..Default::default() };
    let z = loop {
        let z = random_matrix(rng, n, d, 1.0);
        let clear = huber_residuals(&z, &graph).iter().all(|r| (r - config.huber_delta).abs() > 1e-3 && *r > 1e-3);
        if form == LaplacianForm::Pairwise || clear {
            break z;
        }
    };
    let eval = |v: &Array2<f64>| -> Result<f64> { Ok(laplacian_loss(&EmbeddingBatch::new(v.clone(), positions.clone())?, &graph, &config)?.value) };
    let analytic = laplacian_loss(&EmbeddingBatch::new(z.clone(), positions.clone())?, &graph, &config)?.grad;
    let numeric = numeric_gradient(eval, &z, h)?;
    Ok(relative_error(analytic.as_slice().unwrap(), numeric.as_slice().unwrap()))
}

fn consistency_instance(rng: &mut Rng, h: f64) -> Result<f64> {
    let (ns, nt, d) = (rng.random_range(1..=32), rng.random_range(1..=32), rng.random_range(1..=16));
    let mut pairs = Vec::new();
    for i in 0..ns {
        if rng.random_bool(0.8) {
            pairs.push((i, rng.random_range(0..nt)));
        }
    }
    let pairs = CorrespondenceSet::new(if pairs.is_empty() { vec![(0, 0)] } else { pairs })?;
    let teacher = EmbeddingBatch::new(random_matrix(rng, nt, d, 1.0), vec![Vec3::zeros(); nt])?;
    let s = random_matrix(rng, ns, d, 1.0);
    let eval = |v: &Array2<f64>| -> Result<f64> { Ok(consistency_loss(&teacher, &EmbeddingBatch::new(v.clone(), vec![Vec3::zeros(); ns])?, &pairs)?.value) };
    let analytic = consistency_loss(&teacher, &EmbeddingBatch::new(s.clone(), vec![Vec3::zeros(); ns])?, &pairs)?.grad;
    let numeric = numeric_gradient(eval, &s, h)?;
    Ok(relative_error(analytic.as_slice().unwrap(), numeric.as_slice().unwrap()))
}

/// Encoder and prototype parameters under a clustering loss plus a linear
/// probe on the embeddings.
fn encoder_instance(rng: &mut Rng, h: f64) -> Result<f64> {
    let hidden = rng.random_range(1..=6);
    let config = ModelConfig { hidden: vec![hidden], embed_dim: rng.random_range(2..=6), prototypes: rng.random_range(2..=6) };
    let mut params = ModelParams::init(&config, rng)?;
    params.encoder.mask_token = Array1::from_shape_simple_fn(INPUT_DIM, || rng.random_range(-1.0..1.0));
    let n = rng.random_range(2..=8);
    let cloud = PointCloud::new((0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect())?
        .with_colors((0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect())?
        .with_normals((0..n).map(|_| Vec3::new(rng.random(), rng.random(), 1.0).normalize()).collect())?;
    let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    let tau = rng.random_range(0.1..1.0);
    let q = sinkhorn_normalize(&LogitsBatch::new(random_matrix(rng, n, config.prototypes, 3.0), 0.5)?, 3)?;
    let probe = random_matrix(rng, n, config.embed_dim, 1.0);

    let loss = |p: &ModelParams| -> Result<(f64, ModelParams)> {
        let (emb, cache) = encode_with_mask(&p.encoder, &cloud, Some(&mask))?;
        let logits = p.head.logits(emb.values())?;
        let (ce, dlog) = clustering_ce(&q, &LogitsBatch::new(logits, tau)?)?;
        let value = ce + (emb.values() * &probe).sum();
        let (demb, dproj) = p.head.backward(emb.values(), &dlog);
        let encoder = p.encoder.backward(&cache, &(demb + &probe))?;
        let mut grad = p.zeros_like();
        grad.encoder = encoder;
        *grad.head.projection_mut() = dproj;
        Ok((value, grad))
    };
    let (_, analytic) = loss(&params)?;
    let mut numeric = Vec::new();
    let mut probe_params = params.clone();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let orig = probe_params.tensors()[t][j];
            probe_params.tensors_mut()[t][j] = orig + h;
            let up = loss(&probe_params)?.0;
            probe_params.tensors_mut()[t][j] = orig - h;
            let down = loss(&probe_params)?.0;
            probe_params.tensors_mut()[t][j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let analytic: Vec<f64> = analytic.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    Ok(relative_error(&analytic, &numeric))
}

pub fn run_suite(name: &str, config: &GradcheckConfig) -> Result<SuiteResult> {
    let id = SUITES.iter().position(|s| *s == name).ok_or_else(|| crate::error::invalid(format!("unknown gradcheck suite {name:?}")))?;
    let errors = (0..config.instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(config.seed, (id * 1_000_000 + i) as u64);
            match id {
                0 => clustering_instance(&mut rng, config.step),
                1 => laplacian_instance(&mut rng, config.step, LaplacianForm::Pairwise),
                2 => laplacian_instance(&mut rng, config.step, LaplacianForm::HuberResidual),
                3 => consistency_instance(&mut rng, config.step),
                _ => encoder_instance(&mut rng, config.step),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(SuiteResult {
        name: name.to_string(),
        instances: config.instances,
        max_rel_error,
        passed: max_rel_error < config.tolerance && errors.iter().all(|e| e.is_finite()),
    })
}

pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let suites = SUITES.iter().map(|s| run_suite(s, config)).collect::<Result<Vec<_>>>()?;
    let passed = suites.iter().all(|s| s.passed);
    Ok(GradcheckReport { step: config.step, tolerance: config.tolerance, suites, passed })
}
