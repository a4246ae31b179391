use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::voxelgrid::VoxelCoord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEval {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `tp / (tp + fp + fn)`, or 1.0 when all three are zero.
    pub iou: f64,
    pub frame_index: usize,
}

impl FrameEval {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, frame_index: usize) -> Self {
        let denom = tp + fp + fn_;
        let iou = if denom == 0 {
            log::debug!("frame {frame_index}: nothing moving and nothing predicted, IoU := 1");
            1.0
        } else {
            tp as f64 / denom as f64
        };
        FrameEval {
            tp,
            fp,
            fn_,
            iou,
            frame_index,
        }
    }

    /// Counts over parallel prediction/truth flags of the same voxels.
    pub fn from_masks(pred: &[bool], truth: &[bool], frame_index: usize) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Data(format!(
                "frame {frame_index}: {} predictions for {} voxels",
                pred.len(),
                truth.len()
            )));
        }
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        Ok(Self::from_counts(tp, fp, fn_, frame_index))
    }

    /// True when the frame had neither moving voxels nor moving predictions.
    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

/// IoU of the moving class given the predicted and true moving voxels of a frame.
pub fn frame_iou(pred: &[VoxelCoord], truth: &[VoxelCoord], universe: &[VoxelCoord], frame_index: usize) -> Result<FrameEval> {
    let universe: FxHashSet<&VoxelCoord> = universe.iter().collect();
    let pred: FxHashSet<&VoxelCoord> = pred.iter().collect();
    let truth: FxHashSet<&VoxelCoord> = truth.iter().collect();
    for (name, set) in [("prediction", &pred), ("ground truth", &truth)] {
        if let Some(v) = set.iter().find(|v| !universe.contains(*v)) {
            return Err(Error::Data(format!(
                "frame {frame_index}: {name} voxel {v:?} is not occupied"
            )));
        }
    }
    let tp = pred.intersection(&truth).count();
    Ok(FrameEval::from_counts(tp, pred.len() - tp, truth.len() - tp, frame_index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEval {
    pub frames: Vec<FrameEval>,
    pub miou: f64,
}

pub fn sequence_miou(frames: Vec<FrameEval>) -> Result<SequenceEval> {
    if frames.is_empty() {
        return Err(Error::Argument("mIoU of an empty sequence".into()));
    }
    let miou = frames.iter().map(|f| f.iou).sum::<f64>() / frames.len() as f64;
    Ok(SequenceEval { frames, miou })
}
