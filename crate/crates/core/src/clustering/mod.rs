//! Gaussian-mixture partitioning of voxel embeddings and the mapping of
//! mixture components to the moving class.

mod gmm;
mod mapping;
mod persist;
mod sampling;

pub use gmm::{assign, assign_all, fit_gmm, fit_gmm_from_means, kmeans_pp_indices, log_likelihood, GmmModel, GmmOptions};
pub use mapping::{map_clusters, segment, ClusterMapping, DEFAULT_IOU_THRESHOLD};
pub use persist::{decode_gmm, encode_gmm, load_gmm, save_gmm, GMM_MAGIC};
pub use sampling::{sample_for_fit, sample_indices};
