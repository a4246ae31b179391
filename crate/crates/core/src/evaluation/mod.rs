//! Voxel-level IoU for the moving class, point-to-voxel label lifting and
//! the hyperparameter sweep harness.

mod lift;
mod metrics;
mod sweep;

pub use lift::{lift_labels, LiftRule};
pub use metrics::{frame_iou, sequence_miou, FrameEval, SequenceEval};
pub use sweep::{mean_std, sweep, AxisSummary, SweepCell, SweepGrid, SweepRow, SweepTable};
