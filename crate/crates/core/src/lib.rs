//! Unsupervised moving-object segmentation for point-cloud videos recorded
//! by a stationary LiDAR.
//!
//! The pipeline voxelizes every frame, tracks a sliding window of binary
//! occupancy per voxel, stacks the histories of each occupied voxel's
//! neighborhood into a multivariate occupancy time series (MOTS), encodes it
//! with a small 1D convolutional autoencoder and clusters the embeddings
//! with a diagonal Gaussian mixture. Clusters that overlap a reference
//! moving mask are labeled moving.

pub mod autoencoder;
pub mod clustering;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod mots;
pub mod par;
pub mod pipeline;
pub mod synthetic;
pub mod voxelgrid;

pub use error::{Error, Result};
