//! Reading LiDAR frames, poses and point labels; pose alignment and ground
//! removal on raw points.
//!
//! Frame files use the KITTI velodyne layout: packed little-endian `f32`
//! quadruplets `(x, y, z, intensity)`. Pose files hold one row-major 3×4
//! `[R|t]` matrix per line. Label files hold one little-endian `u32` per
//! point; the lower 16 bits carry the semantic class.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Bytes per point record in a frame file.
pub const POINT_RECORD_BYTES: usize = 16;

/// SemanticKITTI-MOS classes that denote moving objects.
pub const DEFAULT_MOVING_CLASSES: [u32; 9] = [251, 252, 253, 254, 255, 256, 257, 258, 259];

/// Label value written for moving points in exported label files.
pub const EXPORT_MOVING: u32 = 251;
/// Label value written for static points in exported label files.
pub const EXPORT_STATIC: u32 = 9;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointFrame {
    pub points: Vec<Point3>,
    pub intensities: Vec<f32>,
    pub frame_index: usize,
    /// Record indices dropped at load time because a field was NaN or
    /// infinite, ascending.
    pub dropped: Vec<usize>,
}

impl PointFrame {
    pub fn new(points: Vec<Point3>, intensities: Vec<f32>, frame_index: usize) -> Result<Self> {
        if points.len() != intensities.len() {
            return Err(Error::Argument(format!(
                "{} points but {} intensities",
                points.len(),
                intensities.len()
            )));
        }
        Ok(PointFrame {
            points,
            intensities,
            frame_index,
            dropped: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointFrame {
        PointFrame {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            intensities: indices.iter().map(|&i| self.intensities[i]).collect(),
            frame_index: self.frame_index,
            dropped: self.dropped.clone(),
        }
    }
}

/// Rigid sensor pose: `p_world = rotation · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub frame_index: usize,
}

impl Pose {
    pub const ORTHONORMAL_TOL: f64 = 1e-5;

    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3], frame_index: usize) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
            frame_index,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity(frame_index: usize) -> Self {
        Pose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            frame_index,
        }
    }

    fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().flatten().chain(&self.translation).any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("pose {} is not finite", self.frame_index)));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > Self::ORTHONORMAL_TOL {
                    return Err(Error::Argument(format!(
                        "pose {} rotation is not orthonormal (R·Rᵀ[{i}][{j}] = {dot})",
                        self.frame_index
                    )));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > Self::ORTHONORMAL_TOL {
            return Err(Error::Argument(format!(
                "pose {} rotation has determinant {det}",
                self.frame_index
            )));
        }
        Ok(())
    }
}

/// Per-point moving/static ground truth for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointLabels {
    pub moving: Vec<bool>,
    pub frame_index: usize,
}

impl PointLabels {
    pub fn select(&self, indices: &[usize]) -> PointLabels {
        PointLabels {
            moving: indices.iter().map(|&i| self.moving[i]).collect(),
            frame_index: self.frame_index,
        }
    }

    /// Labels of the points `frame` kept at load time. The label file must
    /// have one entry per record, dropped records included.
    pub fn align_to(self, frame: &PointFrame) -> Result<PointLabels> {
        let records = frame.len() + frame.dropped.len();
        if self.moving.len() != records {
            return Err(Error::Data(format!(
                "frame {}: {} labels for {records} point records",
                frame.frame_index,
                self.moving.len()
            )));
        }
        if frame.dropped.is_empty() {
            return Ok(self);
        }
        let mut skip = frame.dropped.iter().peekable();
        let moving = self
            .moving
            .into_iter()
            .enumerate()
            .filter(|(i, _)| {
                if skip.peek() == Some(&i) {
                    skip.next();
                    false
                } else {
                    true
                }
            })
            .map(|(_, m)| m)
            .collect();
        Ok(PointLabels {
            moving,
            frame_index: self.frame_index,
        })
    }
}

/// Set of raw label values that count as "moving".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MovingClasses(BTreeSet<u32>);

impl Default for MovingClasses {
    fn default() -> Self {
        MovingClasses(DEFAULT_MOVING_CLASSES.into_iter().collect())
    }
}

impl MovingClasses {
    pub fn new(values: impl IntoIterator<Item = u32>) -> Self {
        MovingClasses(values.into_iter().collect())
    }

    pub fn is_moving(&self, raw: u32) -> bool {
        self.0.contains(&(raw & 0xFFFF))
    }

    pub fn values(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Decodes a frame buffer, dropping records with a non-finite field.
pub fn decode_point_frame(bytes: &[u8], frame_index: usize) -> std::result::Result<PointFrame, usize> {
    let trailing = bytes.len() % POINT_RECORD_BYTES;
    if trailing != 0 {
        return Err(trailing);
    }
    let n = bytes.len() / POINT_RECORD_BYTES;
    let mut frame = PointFrame {
        points: Vec::with_capacity(n),
        intensities: Vec::with_capacity(n),
        frame_index,
        dropped: Vec::new(),
    };
    for (r, rec) in bytes.chunks_exact(POINT_RECORD_BYTES).enumerate() {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap());
        let (x, y, z, intensity) = (f(0), f(1), f(2), f(3));
        if [x, y, z, intensity].iter().all(|v| v.is_finite()) {
            frame.points.push([x as f64, y as f64, z as f64]);
            frame.intensities.push(intensity);
        } else {
            frame.dropped.push(r);
        }
    }
    Ok(frame)
}

pub fn load_point_frame(path: &Path, frame_index: usize) -> Result<PointFrame> {
    let bytes = read(path)?;
    decode_point_frame(&bytes, frame_index).map_err(|trailing| {
        Error::format(
            path,
            format!(
                "length {} is not a multiple of {POINT_RECORD_BYTES} ({trailing} trailing bytes)",
                bytes.len()
            ),
        )
    })
}

pub fn encode_point_frame(frame: &PointFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.len() * POINT_RECORD_BYTES);
    for (p, &i) in frame.points.iter().zip(&frame.intensities) {
        for v in [p[0] as f32, p[1] as f32, p[2] as f32, i] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_point_frame(path: &Path, frame: &PointFrame) -> Result<()> {
    fs::write(path, encode_point_frame(frame)).map_err(|e| Error::io(path, e))
}

/// Reads a label file. Returns the raw values; use [`MovingClasses`] to
/// turn them into [`PointLabels`].
pub fn load_raw_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path,
            format!("length {} is not a multiple of 4 ({} trailing bytes)", bytes.len(), bytes.len() % 4),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn load_labels(path: &Path, classes: &MovingClasses, frame_index: usize) -> Result<PointLabels> {
    let raw = load_raw_labels(path)?;
    Ok(PointLabels {
        moving: raw.into_iter().map(|v| classes.is_moving(v)).collect(),
        frame_index,
    })
}

pub fn write_raw_labels(path: &Path, values: &[u32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes moving/static flags using the given raw label values.
pub fn write_labels(path: &Path, moving: &[bool], moving_value: u32, static_value: u32) -> Result<()> {
    let values: Vec<u32> = moving
        .iter()
        .map(|&m| if m { moving_value } else { static_value })
        .collect();
    write_raw_labels(path, &values)
}

pub fn parse_poses(text: &str) -> std::result::Result<Vec<Pose>, String> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        if vals.len() != 12 {
            return Err(format!("line {}: expected 12 values, found {}", lineno + 1, vals.len()));
        }
        let rotation = [
            [vals[0], vals[1], vals[2]],
            [vals[4], vals[5], vals[6]],
            [vals[8], vals[9], vals[10]],
        ];
        let translation = [vals[3], vals[7], vals[11]];
        let pose = Pose::new(rotation, translation, poses.len())
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn load_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text).map_err(|msg| Error::format(path, msg))
}

/// Expresses `frame` (recorded at `pose`) in the sensor frame of `reference`.
pub fn apply_pose(frame: &PointFrame, pose: &Pose, reference: &Pose) -> PointFrame {
    let r = &pose.rotation;
    let q = &reference.rotation;
    let dt = [
        pose.translation[0] - reference.translation[0],
        pose.translation[1] - reference.translation[1],
        pose.translation[2] - reference.translation[2],
    ];
    let points = frame
        .points
        .iter()
        .map(|p| {
            let mut w = [0.0; 3];
            for i in 0..3 {
                w[i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + dt[i];
            }
            // rotation inverse is its transpose
            let mut out = [0.0; 3];
            for i in 0..3 {
                out[i] = q[0][i] * w[0] + q[1][i] * w[1] + q[2][i] * w[2];
            }
            out
        })
        .collect();
    PointFrame {
        points,
        intensities: frame.intensities.clone(),
        frame_index: frame.frame_index,
        dropped: frame.dropped.clone(),
    }
}

/// Keeps points strictly above `z_threshold`. The returned index map gives,
/// for each kept point, its index in the input frame.
pub fn remove_ground(frame: &PointFrame, z_threshold: f64) -> (PointFrame, Vec<usize>) {
    let keep: Vec<usize> = frame
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| p[2] > z_threshold)
        .map(|(i, _)| i)
        .collect();
    (frame.select(&keep), keep)
}

/// Frame files of a sequence directory, sorted by file name.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "bin") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Label file that accompanies `frame_file` inside `labels_dir`.
pub fn label_path_for(frame_file: &Path, labels_dir: &Path) -> PathBuf {
    let stem = frame_file.file_stem().unwrap_or_default();
    labels_dir.join(stem).with_extension("label")
}

/// Writes one CSV-ish text file through a buffered writer.
pub(crate) fn write_text(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
