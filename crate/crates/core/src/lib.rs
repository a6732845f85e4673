//! Sparse-voxel Gaussian splat scenes.
//!
//! A scene is a high-resolution sparse voxel grid whose occupied voxels each
//! anchor a fixed number of 3D Gaussians. This crate provides the grid data
//! structure and its hierarchy, the activation decoding from raw per-voxel
//! parameters to render-ready Gaussians, a CPU tile rasterizer with analytic
//! gradients, an equirectangular sky background, LiDAR simulation against the
//! Gaussians, the ground-truth point-cloud pipeline, depth-binned feature
//! unprojection, and the losses/metrics used to train and evaluate all of it.

pub mod camera;
pub mod conditioning;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod lidar;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod ply;
pub mod point_cloud;
pub mod raster;
pub mod raster_tensor;
pub mod renderer;
pub mod selftest;
pub mod sky;
pub mod sparse_grid;
pub mod spatial;

pub use camera::Camera;
pub use error::{Error, Result};
pub use gaussian::{Gaussian, RawGaussianParams, VoxSplatScene};
pub use geometry::RigidTransform;
pub use point_cloud::LabeledPointCloud;
pub use raster::Raster;
pub use sparse_grid::{GridMeta, SparseVoxelGrid, VoxelCoord};

/// 3-vector of `f64`, used for every metric-space quantity in the crate.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix of `f64`.
pub type Mat3 = nalgebra::Matrix3<f64>;
