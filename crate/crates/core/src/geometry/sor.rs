use super::knn::knn_search;
use super::PointCloud;
use crate::error::{invalid, Result};

/// Output of [`sor_filter`].
#[derive(Debug, Clone)]
pub struct SorResult {
    pub cloud: PointCloud,
    /// Source indices of the survivors, ascending.
    pub kept: Vec<usize>,
    /// Source indices of the removed points, ascending.
    pub removed: Vec<usize>,
    /// Mean kNN distance per source point (NaN for invalid points).
    pub mean_distances: Vec<f64>,
    pub threshold: f64,
    /// Set when the cloud was too small to filter and was passed through.
    pub passed_through: bool,
}

fn ordered_sum(values: &mut [f64]) -> f64 {
    // summing in sorted order makes the statistics independent of point order
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Statistical outlier removal.
///
/// A valid point is removed when the mean distance to its `k` nearest
/// neighbors exceeds `mean + std_mult · std` of those means over the cloud
/// (population standard deviation). When the spread is at rounding level
/// (`std ≤ 1e-12 · mean`) nothing is removed. Invalid points are dropped.
pub fn sor_filter(cloud: &PointCloud, k: usize, std_mult: f64) -> Result<SorResult> {
    if k == 0 {
        return Err(invalid("SOR k must be at least 1"));
    }
    if !(std_mult > 0.0) {
        return Err(invalid(format!("SOR std_mult must be positive, got {std_mult}")));
    }
    let valid = cloud.valid_indices();
    if valid.len() <= k {
        log::warn!("SOR: {} valid points for k = {k}; passing cloud through", valid.len());
        return Ok(SorResult {
            cloud: cloud.clone(),
            kept: (0..cloud.len()).collect(),
            removed: Vec::new(),
            mean_distances: vec![f64::NAN; cloud.len()],
            threshold: f64::INFINITY,
            passed_through: true,
        });
    }

    let neighbors = knn_search(cloud, k);
    let mut mean_distances = vec![f64::NAN; cloud.len()];
    for &i in &valid {
        let mut d: Vec<f64> = neighbors[i].iter().map(|n| n.distance()).collect();
        mean_distances[i] = ordered_sum(&mut d) / k as f64;
    }
    let mut means: Vec<f64> = valid.iter().map(|&i| mean_distances[i]).collect();
    let n = means.len() as f64;
    let mean = ordered_sum(&mut means) / n;
    let mut sq: Vec<f64> = means.iter().map(|m| (m - mean) * (m - mean)).collect();
    let std = (ordered_sum(&mut sq) / n).sqrt();

    let threshold = if std <= 1e-12 * mean { f64::INFINITY } else { mean + std_mult * std };
    let (kept, removed): (Vec<usize>, Vec<usize>) =
        valid.iter().partition(|&&i| mean_distances[i] <= threshold);
    Ok(SorResult { cloud: cloud.select(&kept), kept, removed, mean_distances, threshold, passed_through: false })
}
