use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::PointLabels;

/// How point labels inside one voxel combine into a voxel label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LiftRule {
    /// Moving if any contained point is moving.
    #[default]
    Any,
    /// Moving if strictly more than half of the contained points are moving.
    Majority,
}

impl FromStr for LiftRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any" => Ok(LiftRule::Any),
            "majority" => Ok(LiftRule::Majority),
            other => Err(Error::Config(format!("unknown lift rule {other:?} (any|majority)"))),
        }
    }
}

impl std::fmt::Display for LiftRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LiftRule::Any => "any",
            LiftRule::Majority => "majority",
        })
    }
}

/// Voxel moving flags from per-point labels and the voxel → point lists of
/// the same frame.
pub fn lift_labels(labels: &PointLabels, voxel_points: &[Vec<usize>], rule: LiftRule) -> Result<Vec<bool>> {
    voxel_points
        .iter()
        .map(|points| {
            let mut moving = 0;
            for &i in points {
                let l = labels.moving.get(i).ok_or_else(|| {
                    Error::Data(format!(
                        "frame {}: point index {i} out of range for {} labels",
                        labels.frame_index,
                        labels.moving.len()
                    ))
                })?;
                moving += *l as usize;
            }
            Ok(match rule {
                LiftRule::Any => moving > 0,
                LiftRule::Majority => 2 * moving > points.len(),
            })
        })
        .collect()
}
