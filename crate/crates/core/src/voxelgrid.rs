//! Sparse voxel occupancy over a sliding window of frames.
//!
//! Each stored voxel keeps a `w`-bit occupancy history packed into a `u64`:
//! bit 0 is the current frame, bit `j` is `j` frames ago. Voxels whose
//! history becomes all zero are evicted; lookups of absent voxels read as
//! all-zero histories.

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::ingest::PointFrame;

/// Longest supported window; histories are packed into one `u64`.
pub const MAX_WINDOW: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    /// Voxel edge length in meters.
    pub resolution: f64,
    /// History length in frames.
    pub window: usize,
    /// Neighborhood radius in voxels.
    pub radius: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            resolution: 0.2,
            window: 15,
            radius: 2,
        }
    }
}

impl GridConfig {
    pub fn new(resolution: f64, window: usize, radius: usize) -> Result<Self> {
        let cfg = GridConfig {
            resolution,
            window,
            radius,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(Error::Argument(format!("resolution must be > 0, got {}", self.resolution)));
        }
        if !(2..=MAX_WINDOW).contains(&self.window) {
            return Err(Error::Argument(format!(
                "window must be in [2, {MAX_WINDOW}], got {}",
                self.window
            )));
        }
        Ok(())
    }

    /// Number of MOTS channels, `(2r+1)³`.
    pub fn channels(&self) -> usize {
        (2 * self.radius + 1).pow(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VoxelCoord {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl VoxelCoord {
    pub const fn new(ix: i32, iy: i32, iz: i32) -> Self {
        VoxelCoord { ix, iy, iz }
    }

    pub fn of_point(p: &[f64; 3], resolution: f64) -> Self {
        VoxelCoord {
            ix: (p[0] / resolution).floor() as i32,
            iy: (p[1] / resolution).floor() as i32,
            iz: (p[2] / resolution).floor() as i32,
        }
    }

    pub fn offset(self, d: (i32, i32, i32)) -> Self {
        VoxelCoord {
            ix: self.ix + d.0,
            iy: self.iy + d.1,
            iz: self.iz + d.2,
        }
    }
}

/// Occupied voxels of one frame with the points each one contains.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Voxelization {
    /// Sorted, unique.
    pub voxels: Vec<VoxelCoord>,
    /// `point_indices[i]` lists the frame's point indices inside `voxels[i]`, ascending.
    pub point_indices: Vec<Vec<usize>>,
}

impl Voxelization {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn index_of(&self, v: &VoxelCoord) -> Option<usize> {
        self.voxels.binary_search(v).ok()
    }
}

pub fn voxelize(frame: &PointFrame, resolution: f64) -> Voxelization {
    let mut cells: FxHashMap<VoxelCoord, Vec<usize>> = FxHashMap::default();
    for (i, p) in frame.points.iter().enumerate() {
        cells.entry(VoxelCoord::of_point(p, resolution)).or_default().push(i);
    }
    let mut pairs: Vec<(VoxelCoord, Vec<usize>)> = cells.into_iter().collect();
    pairs.sort_unstable_by_key(|(v, _)| *v);
    let (voxels, point_indices) = pairs.into_iter().unzip();
    Voxelization {
        voxels,
        point_indices,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccupancyHistory {
    /// Bit `j` is the occupancy `j` frames before the current one.
    pub bits: u64,
    pub last_occupied: usize,
}

impl OccupancyHistory {
    /// Oldest-first 0/1 vector of length `window`.
    pub fn to_vec(self, window: usize) -> Vec<u8> {
        bits_to_vec(self.bits, window)
    }
}

/// Expands packed history bits into an oldest-first 0/1 vector.
pub fn bits_to_vec(bits: u64, window: usize) -> Vec<u8> {
    (0..window).map(|j| ((bits >> (window - 1 - j)) & 1) as u8).collect()
}

fn window_mask(window: usize) -> u64 {
    if window >= 64 {
        u64::MAX
    } else {
        (1u64 << window) - 1
    }
}

/// Sliding-window occupancy state of a scene.
#[derive(Debug, Clone, Default)]
pub struct SparseFrameState {
    window: usize,
    histories: FxHashMap<VoxelCoord, OccupancyHistory>,
    frame: Option<usize>,
    current: Vec<VoxelCoord>,
}

impl SparseFrameState {
    pub fn new(window: usize) -> Result<Self> {
        if !(2..=MAX_WINDOW).contains(&window) {
            return Err(Error::Argument(format!(
                "window must be in [2, {MAX_WINDOW}], got {window}"
            )));
        }
        Ok(SparseFrameState {
            window,
            ..Default::default()
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Index of the most recently absorbed frame, `None` before the first advance.
    pub fn frame_index(&self) -> Option<usize> {
        self.frame
    }

    /// Voxels occupied in the current frame, sorted.
    pub fn occupied(&self) -> &[VoxelCoord] {
        &self.current
    }

    pub fn len(&self) -> usize {
        self.histories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histories.is_empty()
    }

    /// Absorbs the occupied set of the next frame.
    pub fn advance(&mut self, occupied: &[VoxelCoord]) {
        let t = self.frame.map_or(0, |f| f + 1);
        let mask = window_mask(self.window);
        self.histories.retain(|_, h| {
            h.bits = (h.bits << 1) & mask;
            h.bits != 0
        });
        for &v in occupied {
            let h = self.histories.entry(v).or_insert(OccupancyHistory {
                bits: 0,
                last_occupied: t,
            });
            h.bits |= 1;
            h.last_occupied = t;
        }
        let mut current = occupied.to_vec();
        current.sort_unstable();
        current.dedup();
        self.current = current;
        self.frame = Some(t);
    }

    /// Packed history bits; zero for voxels not stored.
    #[inline]
    pub fn bits_of(&self, v: &VoxelCoord) -> u64 {
        self.histories.get(v).map_or(0, |h| h.bits)
    }

    pub fn entry(&self, v: &VoxelCoord) -> Option<&OccupancyHistory> {
        self.histories.get(v)
    }

    /// Oldest-first occupancy of `v` over the window.
    pub fn history_of(&self, v: &VoxelCoord) -> Vec<u8> {
        bits_to_vec(self.bits_of(v), self.window)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelCoord, &OccupancyHistory)> {
        self.histories.iter()
    }
}
