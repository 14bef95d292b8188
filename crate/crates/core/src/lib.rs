//! Self-supervised loss stack and geometric alignment for noisy point clouds
//! reconstructed from video.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: point clouds, exact kNN search, outlier removal, dominant
//!   plane detection, Z-up alignment, scale normalisation and PCA normals.
//! - [`ply`]: PLY reader/writer (ASCII and binary little-endian).
//! - [`sinkhorn`]: softmax and Sinkhorn-Knopp soft assignments over prototypes.
//! - [`losses`]: clustering cross-entropy, Laplacian smoothing, noise
//!   consistency and the weighted total objective, all with analytic gradients.
//! - [`model`]: a per-point MLP encoder, cosine prototype head, EMA teacher,
//!   AdamW and the checkpoint container.
//! - [`views`]: global/local crops, grid masking and noise augmentation.
//! - [`trainer`]: the teacher-student training loop and its schedules.
//! - [`synth`]: synthetic rooms with ghost surfaces, holes and outliers.
//! - [`pipeline`]: the per-scene alignment pipeline and batch reports.

pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod pca;
pub mod pipeline;
pub mod ply;
pub mod rng;
pub mod schedule;
pub mod sinkhorn;
pub mod synth;
pub mod trainer;
pub mod views;

pub use error::{Error, Result};
pub use geometry::{PointCloud, Vec3};
