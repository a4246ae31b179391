use std::collections::BTreeSet;

use super::gmm::{assign_all, GmmModel};
use crate::error::{Error, Result};
use crate::par::Exec;

/// Minimum overlap with the reference moving mask for a cluster to be labeled moving.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMapping {
    pub moving: BTreeSet<usize>,
    /// IoU of each cluster against the reference mask.
    pub iou: Vec<f64>,
    pub threshold: f64,
    /// Set when the reference mask is empty and nothing could qualify.
    pub warning: Option<String>,
}

impl ClusterMapping {
    pub fn is_moving(&self, cluster: usize) -> bool {
        self.moving.contains(&cluster)
    }
}

/// Marks every cluster whose IoU with `reference_moving` reaches `threshold`.
///
/// `assignments[i]` and `reference_moving[i]` describe the same voxel of the
/// reference frame.
pub fn map_clusters(assignments: &[usize], reference_moving: &[bool], k: usize, threshold: f64) -> Result<ClusterMapping> {
    if assignments.len() != reference_moving.len() {
        return Err(Error::Data(format!(
            "{} assignments but {} mask entries",
            assignments.len(),
            reference_moving.len()
        )));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
        return Err(Error::Data(format!("cluster id {bad} out of range for k = {k}")));
    }
    let mask_size = reference_moving.iter().filter(|&&m| m).count();
    let mut inter = vec![0usize; k];
    let mut size = vec![0usize; k];
    for (&a, &m) in assignments.iter().zip(reference_moving) {
        size[a] += 1;
        inter[a] += m as usize;
    }
    let iou: Vec<f64> = (0..k)
        .map(|c| {
            let union = size[c] + mask_size - inter[c];
            if union == 0 {
                0.0
            } else {
                inter[c] as f64 / union as f64
            }
        })
        .collect();
    let moving = (0..k).filter(|&c| iou[c] >= threshold).collect();
    let warning = (mask_size == 0).then(|| {
        log::warn!("reference frame has no moving voxels; every cluster maps to static");
        "reference moving mask is empty".to_string()
    });
    Ok(ClusterMapping {
        moving,
        iou,
        threshold,
        warning,
    })
}

/// Moving/static flag per embedding.
pub fn segment<S: AsRef<[f64]> + Sync>(model: &GmmModel, mapping: &ClusterMapping, embeddings: &[S]) -> Result<Vec<bool>> {
    Ok(assign_all(model, embeddings, Exec::default())?
        .into_iter()
        .map(|c| mapping.is_moving(c))
        .collect())
}
