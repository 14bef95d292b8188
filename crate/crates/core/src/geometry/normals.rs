use nalgebra::{Matrix3, SymmetricEigen};

use super::knn::knn_search;
use super::{PointCloud, Vec3};
use crate::error::{invalid, Error, Result};

/// Output of [`estimate_normals`].
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// Points whose neighborhood covariance had rank < 2; their normal is +Z.
    pub degenerate: Vec<usize>,
}

/// Orientation convention: non-negative z; when |z| < 1e-6, non-negative x;
/// when x is also negligible, non-negative y.
pub fn orient_to_up_hemisphere(n: Vec3) -> Vec3 {
    let key = if n.z.abs() >= 1e-6 {
        n.z
    } else if n.x.abs() >= 1e-6 {
        n.x
    } else {
        n.y
    };
    if key < 0.0 {
        -n
    } else {
        n
    }
}

/// PCA normals from each point and its `k` nearest neighbors.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalEstimate> {
    if k == 0 {
        return Err(invalid("normal estimation needs k >= 1"));
    }
    if cloud.valid_count() <= k {
        return Err(Error::EmptyCloud(format!(
            "normal estimation with k = {k} needs more than {k} points, got {}",
            cloud.valid_count()
        )));
    }
    let neighbors = knn_search(cloud, k);
    let positions = cloud.positions();
    let mut normals = Vec::with_capacity(cloud.len());
    let mut degenerate = Vec::new();
    for (i, list) in neighbors.iter().enumerate() {
        if !cloud.validity()[i] {
            normals.push(Vec3::z());
            continue;
        }
        let count = (list.len() + 1) as f64;
        let centroid = list.iter().fold(positions[i], |acc, n| acc + positions[n.index]) / count;
        let mut cov = Matrix3::zeros();
        for p in std::iter::once(&positions[i]).chain(list.iter().map(|n| &positions[n.index])) {
            let d = p - centroid;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov / count);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let (l1, l2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
        if l2 <= 0.0 || l1 <= 1e-12 * l2 {
            degenerate.push(i);
            normals.push(Vec3::z());
            continue;
        }
        normals.push(orient_to_up_hemisphere(eig.eigenvectors.column(order[0]).normalize()));
    }
    let mut out = cloud.clone();
    out.set_normals_unchecked(normals);
    Ok(NormalEstimate { cloud: out, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_patch_points_up() {
        let mut rng = crate::rng::stream(2, 0);
        use rand::Rng;
        let pts: Vec<Vec3> = (0..400).map(|_| Vec3::new(rng.random(), rng.random(), 0.0)).collect();
        let est = estimate_normals(&PointCloud::new(pts).unwrap(), 10).unwrap();
        assert!(est.degenerate.is_empty());
        for n in est.cloud.normals().unwrap() {
            assert!(n.dot(&Vec3::z()) > 1f64.to_radians().cos());
        }
    }

    #[test]
    fn coincident_neighborhood_is_flagged() {
        let mut pts = vec![Vec3::new(0.3, 0.3, 0.3); 6];
        pts.push(Vec3::new(5.0, 0.0, 0.0));
        let est = estimate_normals(&PointCloud::new(pts).unwrap(), 4).unwrap();
        assert!(est.degenerate.contains(&0));
        assert_eq!(est.cloud.normals().unwrap()[0], Vec3::z());
    }

    #[test]
    fn orientation_convention() {
        assert_eq!(orient_to_up_hemisphere(Vec3::new(0.0, 0.6, -0.8)), Vec3::new(0.0, -0.6, 0.8));
        assert_eq!(orient_to_up_hemisphere(Vec3::new(-1.0, 0.0, 1e-9)), Vec3::new(1.0, 0.0, -1e-9));
        assert_eq!(orient_to_up_hemisphere(Vec3::new(0.0, -1.0, 0.0)), Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn too_few_points() {
        let c = PointCloud::from_arrays(&[[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(estimate_normals(&c, 2).is_err());
    }
}
