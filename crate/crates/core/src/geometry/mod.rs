//! Point-cloud containers, exact spatial search and the scene alignment steps
//! (outlier removal, dominant plane, Z-up, scale, normals).

mod align;
mod cloud;
mod kdtree;
mod knn;
mod normals;
mod plane;
mod scale;
mod sor;
mod transform;

pub use align::align_z_up;
pub use cloud::{PointCloud, Vec3};
pub use kdtree::{KdTree, Neighbor};
pub use knn::{adaptive_sigma, build_knn_graph, knn_search, Edge, KnnGraph, SigmaMode};
pub use normals::{estimate_normals, orient_to_up_hemisphere, NormalEstimate};
pub use plane::{
    default_inlier_threshold, detect_dominant_plane, detect_dominant_plane_with,
    fit_plane_least_squares, Plane, PlaneFit, RansacConfig,
};
pub use scale::{aabb_diagonal, scale_align, scale_align_about, ScaleDistribution};
pub use sor::{sor_filter, SorResult};
pub use transform::{rotation_between, RigidSimilarity};
