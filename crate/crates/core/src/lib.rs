//! Point cloud codec built on coordinate networks.
//!
//! The encoder overfits two small fully-connected networks per point cloud
//! (or per frame group): one maps voxel coordinates to occupancy
//! probabilities, the other maps occupied voxels to RGB colors. The
//! compressed stream carries quantized, entropy-coded network parameters
//! plus the auxiliary data needed for reconstruction (non-empty cube map,
//! occupancy thresholds, de-voxelization transform). The decoder rebuilds
//! geometry and attributes by network inference alone.

pub mod attrcodec;
pub mod bitstream;
pub mod cli;
pub mod dynamic;
pub mod geomcodec;
pub mod kdtree;
pub mod metrics;
pub mod neuralnet;
pub mod partition;
pub mod pointcloud;
pub mod rng;

pub use pointcloud::{RawCloud, VoxelTransform, VoxelizedCloud};
