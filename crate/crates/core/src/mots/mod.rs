//! Multivariate occupancy time series (MOTS) features.
//!
//! The MOTS of a voxel stacks the occupancy histories of every voxel in its
//! `(2r+1)³` neighborhood, one channel per neighbor offset. Features are
//! only built for voxels occupied in the current frame.

mod cache;

pub use cache::{read_cache, read_cache_file, MotsCacheWriter, CACHE_MAGIC, CACHE_VERSION};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::voxelgrid::{bits_to_vec, GridConfig, SparseFrameState, VoxelCoord};

/// Neighborhood offsets in lexicographic `(dx, dy, dz)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborOffsets {
    radius: usize,
    offsets: Vec<(i32, i32, i32)>,
}

impl NeighborOffsets {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn as_slice(&self) -> &[(i32, i32, i32)] {
        &self.offsets
    }

    /// Channel index of the center voxel.
    pub fn center_channel(&self) -> usize {
        self.offsets.len() / 2
    }
}

pub fn neighbor_offsets(radius: i64) -> Result<NeighborOffsets> {
    if radius < 0 {
        return Err(Error::Argument(format!("radius must be >= 0, got {radius}")));
    }
    let r = i32::try_from(radius).map_err(|_| Error::Argument(format!("radius {radius} too large")))?;
    let side = (2 * r + 1) as usize;
    let mut offsets = Vec::with_capacity(side.pow(3));
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                offsets.push((dx, dy, dz));
            }
        }
    }
    Ok(NeighborOffsets {
        radius: radius as usize,
        offsets,
    })
}

/// One C×w binary feature. Row `c` holds the packed history of the neighbor
/// at offset `c` (bit 0 = current frame).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MotsFeature {
    pub rows: Vec<u64>,
    pub window: usize,
    pub center: VoxelCoord,
    pub frame_index: usize,
}

impl MotsFeature {
    pub fn channels(&self) -> usize {
        self.rows.len()
    }

    /// Entry `(c, j)` with `j` counted oldest-first, `j = w−1` being the current frame.
    #[inline]
    pub fn value(&self, channel: usize, j: usize) -> u8 {
        ((self.rows[channel] >> (self.window - 1 - j)) & 1) as u8
    }

    pub fn row_vec(&self, channel: usize) -> Vec<u8> {
        bits_to_vec(self.rows[channel], self.window)
    }

    /// Writes the C×w matrix row-major as 0.0/1.0 into `out`.
    pub fn fill_dense(&self, out: &mut [f64]) {
        let w = self.window;
        debug_assert_eq!(out.len(), self.rows.len() * w);
        for (row, dst) in self.rows.iter().zip(out.chunks_exact_mut(w)) {
            for (j, d) in dst.iter_mut().enumerate() {
                *d = ((row >> (w - 1 - j)) & 1) as f64;
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len() * self.window];
        self.fill_dense(&mut out);
        out
    }
}

/// Features of every occupied voxel of one frame, sorted by center coordinate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotsBatch {
    pub features: Vec<MotsFeature>,
}

impl MotsBatch {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn coords(&self) -> impl Iterator<Item = (VoxelCoord, usize)> + '_ {
        self.features.iter().map(|f| (f.center, f.frame_index))
    }
}

pub fn gather(state: &SparseFrameState, offsets: &NeighborOffsets, center: VoxelCoord) -> MotsFeature {
    MotsFeature {
        rows: offsets
            .as_slice()
            .iter()
            .map(|&d| state.bits_of(&center.offset(d)))
            .collect(),
        window: state.window(),
        center,
        frame_index: state.frame_index().unwrap_or(0),
    }
}

pub fn extract_frame(state: &SparseFrameState, offsets: &NeighborOffsets) -> MotsBatch {
    extract_frame_with(Exec::default(), state, offsets)
}

pub fn extract_frame_with(exec: Exec, state: &SparseFrameState, offsets: &NeighborOffsets) -> MotsBatch {
    MotsBatch {
        features: par::map(exec, state.occupied(), |&v| gather(state, offsets, v)),
    }
}

/// Streams one [`MotsBatch`] per input frame of occupied voxels.
pub struct MotsStream<I> {
    frames: I,
    state: SparseFrameState,
    offsets: NeighborOffsets,
    exec: Exec,
}

impl<I> MotsStream<I> {
    pub fn state(&self) -> &SparseFrameState {
        &self.state
    }
}

impl<I> Iterator for MotsStream<I>
where
    I: Iterator<Item = Result<Vec<VoxelCoord>>>,
{
    type Item = Result<MotsBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        let occupied = match self.frames.next()? {
            Ok(o) => o,
            Err(e) => return Some(Err(e)),
        };
        self.state.advance(&occupied);
        Some(Ok(extract_frame_with(self.exec, &self.state, &self.offsets)))
    }
}

pub fn extract_sequence<I>(frames: I, config: &GridConfig) -> Result<MotsStream<I::IntoIter>>
where
    I: IntoIterator<Item = Result<Vec<VoxelCoord>>>,
{
    config.validate()?;
    Ok(MotsStream {
        frames: frames.into_iter(),
        state: SparseFrameState::new(config.window)?,
        offsets: neighbor_offsets(config.radius as i64)?,
        exec: Exec::default(),
    })
}
