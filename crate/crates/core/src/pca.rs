//! Embedding visualization: project onto the top three principal components
//! and min-max scale each to a color channel.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{invalid, Result};
use crate::geometry::Vec3;

/// Per-row RGB colors in `[0, 1]`. Component signs are fixed so the largest
/// loading of each component is positive; a component without spread maps to
/// 0.5.
pub fn pca_colors(embeddings: &Array2<f64>) -> Result<Vec<Vec3>> {
    let (n, d) = embeddings.dim();
    if d < 3 {
        return Err(invalid(format!("PCA coloring needs at least 3 embedding dimensions, got {d}")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mean = embeddings.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = embeddings - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut channels = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (c, &k) in order.iter().take(3).enumerate() {
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = axis.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        for (i, row) in centered.rows().into_iter().enumerate() {
            channels[c][i] = row.iter().zip(&axis).map(|(a, b)| a * b).sum();
        }
        let (lo, hi) = channels[c].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let spread = hi - lo;
        // spread at rounding level counts as none
        let scale = embeddings.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for v in channels[c].iter_mut() {
            *v = if spread > 1e-12 * scale { (*v - lo) / spread } else { 0.5 };
        }
    }
    Ok((0..n).map(|i| Vec3::new(channels[0][i], channels[1][i], channels[2][i])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_embeddings_are_gray() {
        let e = Array2::from_elem((5, 4), 0.3);
        for c in pca_colors(&e).unwrap() {
            assert_eq!(c, Vec3::new(0.5, 0.5, 0.5));
        }
    }

    #[test]
    fn too_few_dimensions() {
        assert!(pca_colors(&array![[1.0, 2.0]]).is_err());
    }
}
